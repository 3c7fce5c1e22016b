"""Chunked hiding: one carrier per sub-message, reassembled by secret number."""

from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Callable, Sequence, Union

from .carrier import CarrierRecord
from .errors import (
    AllSetsFailed,
    DuplicateChunk,
    ExtractionError,
    InvalidChunkLen,
    InvalidInput,
    MissingChunk,
    OutputTooShort,
    ResourceError,
    UsageError,
    VerificationFailed,
)
from .model import ModelParams
from .protocol import (
    DEFAULT_M,
    Bundle,
    ModelFileRef,
    ModelRef,
    SplitPlan,
    _as_message,
    extract,
    extract_first_valid,
    hide,
    make_verification,
    verify,
)

log = logging.getLogger(__name__)

NUMBER_WIDTH = 6
MAX_CHUNKS = 10**NUMBER_WIDTH


def secret_number(index: int) -> str:
    if not 0 <= index < MAX_CHUNKS:
        raise InvalidInput(f"chunk index {index} does not fit {NUMBER_WIDTH} digits")
    return f"{index:0{NUMBER_WIDTH}d}"


def parse_secret_number(number: str) -> int:
    if len(number) != NUMBER_WIDTH or not number.isdigit():
        raise InvalidInput(f"malformed secret number {number!r}")
    return int(number)


def plan_split(total_len: int, chunk_len: int) -> SplitPlan:
    if chunk_len < 1:
        raise InvalidChunkLen(f"chunk_len must be >= 1, got {chunk_len}")
    if total_len < 1:
        raise InvalidInput("cannot split an empty message: at least one sub-message is required")
    p = -(-total_len // chunk_len)
    if p > MAX_CHUNKS:
        raise InvalidInput(f"{p} chunks exceed the {MAX_CHUNKS} secret numbers available")
    return SplitPlan(p, chunk_len, total_len)


def split(message, chunk_len: int) -> list[tuple[str, bytes]]:
    msg = _as_message(message)
    plan = plan_split(len(msg), chunk_len)
    return [(secret_number(i), msg[i * chunk_len : (i + 1) * chunk_len]) for i in range(plan.P)]


def merge(parts, count: int | None = None) -> bytes:
    """Concatenate sub-messages by secret number.

    Without ``count`` the range is taken to end at the highest index seen, so
    only interior gaps can be detected.
    """
    by_index: dict[int, bytes] = {}
    dupes = set()
    for number, chunk in parts:
        i = parse_secret_number(number)
        if i in by_index:
            dupes.add(i)
        by_index[i] = bytes(chunk)
    if dupes:
        raise DuplicateChunk(dupes)
    if not by_index:
        raise MissingChunk([0])
    expected = max(by_index) + 1 if count is None else count
    missing = set(range(max(expected, max(by_index) + 1))) - set(by_index)
    if missing:
        raise MissingChunk(missing)
    return b"".join(by_index[i] for i in range(len(by_index)))


def _capacity(model: ModelRef) -> int | None:
    if isinstance(model, ModelParams) and model.output_head == "bytes":
        return model.output_len
    return None


ModelSupplier = Union[ModelRef, Sequence[ModelRef], Callable[[int], ModelRef]]


def _model_for(models: ModelSupplier, k: int) -> ModelRef:
    if isinstance(models, (ModelParams, ModelFileRef)):
        return models
    if callable(models):
        return models(k)
    return models[k % len(models)]


def hide_parallel(message, chunk_len: int | None, carriers: Callable[[], CarrierRecord],
                  models: ModelSupplier, workers: int = 1, redundancy: int = 1,
                  m: int | None = None, media_type: str = "application/octet-stream",
                  base_dir=None) -> Bundle:
    """Split, then hide every chunk against its own carrier.

    Carriers and models are drawn in the calling thread in chunk order, so the
    bundle does not depend on ``workers``. With ``redundancy`` R > 1 each chunk
    gets R sets and a per-chunk verification record.
    """
    msg = _as_message(message)
    if redundancy < 1:
        raise InvalidInput("redundancy must be >= 1")
    if workers < 1:
        raise InvalidInput("workers must be >= 1")
    if chunk_len is None:
        caps = [c for c in (_capacity(_model_for(models, 0)),) if c]
        if not caps:
            raise InvalidChunkLen("chunk_len is required when the model capacity is unknown")
        chunk_len = caps[0]
    plan = plan_split(len(msg), chunk_len)
    parts = split(msg, chunk_len)

    jobs = []
    for i, (number, chunk) in enumerate(parts):
        for r in range(redundancy):
            k = i * redundancy + r
            model = _model_for(models, k)
            cap = _capacity(model)
            if cap is not None and cap < len(chunk):
                raise OutputTooShort(f"chunk {number} needs {len(chunk)} bytes, model emits {cap}")
            jobs.append((k, number, chunk, carriers(), model))

    chunk_m = None if redundancy == 1 else min(DEFAULT_M, chunk_len)

    def run(job):
        k, number, chunk, carrier, model = job
        auth = hide(chunk, carrier, model, set_index=k, secret_number=number, base_dir=base_dir)
        if chunk_m is not None:
            auth = replace(auth, verification=make_verification(chunk, min(chunk_m, len(chunk))))
        return auth

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            sets = list(pool.map(run, jobs))
    else:
        sets = [run(j) for j in jobs]
    m = min(DEFAULT_M, len(msg)) if m is None else m
    return Bundle(sets, make_verification(msg, m), plan=plan, media_type=media_type)


def extract_parallel(bundle: Bundle, resolver, workers: int = 1, base_dir=None) -> bytes:
    """Extract every chunk, reassemble by secret number and verify the whole."""
    groups = defaultdict(list)
    for s in bundle.sets:
        if s.secret_number is None:
            raise InvalidInput(f"set {s.set_index} carries no secret number")
        groups[s.secret_number].append(s)
    if bundle.plan is not None:
        missing = set(range(bundle.plan.P)) - {parse_secret_number(n) for n in groups}
        if missing:
            raise MissingChunk(missing)

    def run(item):
        number, sets = item
        try:
            if len(sets) == 1 and sets[0].verification is None:
                return number, extract(sets[0], resolver, base_dir), None
            v = sets[0].verification
            if v is None:
                raise InvalidInput(f"chunk {number} has redundant sets but no chunk verification")
            return number, extract_first_valid(sets, v, resolver, base_dir=base_dir).message, None
        except (ExtractionError, ResourceError, UsageError) as exc:
            return number, None, exc

    items = sorted(groups.items())
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(it) for it in items]
    failed = [(n, e) for n, _, e in results if e is not None]
    if failed:
        first_n, first_e = failed[0]
        if isinstance(first_e, ResourceError) and not isinstance(first_e, AllSetsFailed):
            raise first_e
        raise VerificationFailed(
            f"{len(failed)} chunk(s) failed, first {first_n}: {type(first_e).__name__}: {first_e}"
        )
    message = merge(((n, chunk) for n, chunk, _ in results), bundle.plan.P if bundle.plan else None)
    if not verify(message, bundle.verification):
        raise VerificationFailed("reassembled message does not match verification info")
    return message

