"""Hiding, extraction, redundancy and channel packaging.

An :class:`AuthorizationSet` carries the three things a receiver needs: the
secret difference, where the cover carrier lives, and the hiding model. A
:class:`Bundle` groups one or more sets for the same message together with
:class:`VerificationInfo`, which is how a receiver tells a good extraction
from one produced by a carrier that has since changed.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import json
import logging
import secrets
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from . import codec
from .carrier import CarrierRecord, SecretLocation
from .errors import (
    AllSetsFailed,
    BundleFormatError,
    CarrierChanged,
    ChannelArtifactMismatch,
    CorruptModel,
    ExtractionError,
    IncompleteAuthorization,
    MTooLarge,
    OutputTooShort,
    ResourceError,
    SumOutOfRange,
    UsageError,
)
from .model import ModelParams, deserialize_model, forward, serialize_model

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1
DEFAULT_M = 8


@dataclass(frozen=True)
class ModelFileRef:
    """A model shared out of band, pinned by the SHA-256 of its file."""

    path: str
    sha256: str

    @classmethod
    def for_file(cls, path) -> "ModelFileRef":
        data = Path(path).read_bytes()
        return cls(str(path), hashlib.sha256(data).hexdigest())

    def load(self, base_dir=None) -> ModelParams:
        p = Path(self.path)
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        try:
            data = p.read_bytes()
        except FileNotFoundError:
            raise IncompleteAuthorization(f"referenced model file {p} not found") from None
        if hashlib.sha256(data).hexdigest() != self.sha256:
            raise CorruptModel(f"model file {p} does not match its recorded checksum")
        return deserialize_model(data)


ModelRef = Union[ModelParams, ModelFileRef]


@dataclass(frozen=True)
class VerificationInfo:
    tail: bytes
    m: int
    total_len: int

    def __post_init__(self):
        if len(self.tail) != self.m or self.m > self.total_len:
            raise MTooLarge(f"tail of {len(self.tail)} bytes, m={self.m}, total={self.total_len}")


@dataclass(frozen=True, eq=False)
class AuthorizationSet:
    secret_difference: np.ndarray
    secret_location: SecretLocation
    model: ModelRef
    codec_scheme: str = codec.SCHEME
    set_index: int = 0
    secret_number: str | None = None
    # per-chunk check, only used when a chunk carries several redundant sets
    verification: VerificationInfo | None = None

    def __post_init__(self):
        if self.secret_difference is None or self.secret_location is None or self.model is None:
            raise IncompleteAuthorization("difference, location and model are all required")
        d = np.asarray(self.secret_difference, dtype=np.int16)
        if d.ndim != 1 or (d.size and np.abs(d.astype(np.int32)).max() > 255):
            raise BundleFormatError("secret difference must be a flat array in [-255, 255]")
        object.__setattr__(self, "secret_difference", d)

    def __eq__(self, other):
        if not isinstance(other, AuthorizationSet):
            return NotImplemented
        return (
            np.array_equal(self.secret_difference, other.secret_difference)
            and self.secret_location == other.secret_location
            and self.model == other.model
            and self.codec_scheme == other.codec_scheme
            and self.set_index == other.set_index
            and self.secret_number == other.secret_number
            and self.verification == other.verification
        )


@dataclass(frozen=True)
class SplitPlan:
    P: int
    chunk_len: int
    total_len: int


@dataclass(eq=False)
class Bundle:
    sets: list[AuthorizationSet]
    verification: VerificationInfo
    nonce: str = field(default_factory=lambda: secrets.token_hex(16))
    plan: SplitPlan | None = None
    media_type: str = "application/octet-stream"
    format_version: int = BUNDLE_VERSION

    def __post_init__(self):
        if not self.sets:
            raise BundleFormatError("a bundle needs at least one authorization set")

    def __eq__(self, other):
        if not isinstance(other, Bundle):
            return NotImplemented
        return to_json(self) == to_json(other)


# ---------------------------------------------------------------------------
# verification


def make_verification(message: bytes, m: int = DEFAULT_M) -> VerificationInfo:
    if m < 0 or m > len(message):
        raise MTooLarge(f"m={m} but message has {len(message)} bytes")
    tail = bytes(message[len(message) - m :]) if m else b""
    return VerificationInfo(tail, m, len(message))


def verify(message: bytes, v: VerificationInfo) -> bool:
    if len(message) != v.total_len:
        return False
    return v.m == 0 or bytes(message[-v.m :]) == v.tail


# ---------------------------------------------------------------------------
# hide / extract


def _as_message(message) -> bytes:
    if isinstance(message, str):
        return message.encode(codec.DEFAULT_ENCODING)
    return bytes(message)


def _params(model: ModelRef, base_dir=None) -> ModelParams:
    if isinstance(model, ModelFileRef):
        return model.load(base_dir)
    return model


def hide(message, carrier: CarrierRecord, model: ModelRef, set_index: int = 0,
         secret_number: str | None = None, base_dir=None) -> AuthorizationSet:
    """Hide ``message`` against ``carrier``; the carrier bytes are only read."""
    msg = _as_message(message)
    out = forward(_params(model, base_dir), carrier.data)
    stego = codec.align(out.stego, len(msg))
    return AuthorizationSet(
        secret_difference=codec.diff(np.frombuffer(msg, dtype=np.uint8), stego),
        secret_location=carrier.location,
        model=model,
        set_index=set_index,
        secret_number=secret_number,
    )


def extract(auth: AuthorizationSet, resolver, base_dir=None) -> bytes:
    """Re-fetch the carrier, re-run the model and add the difference back."""
    if auth.codec_scheme != codec.SCHEME:
        raise BundleFormatError(f"unknown codec scheme {auth.codec_scheme!r}")
    resolve = resolver.resolve if hasattr(resolver, "resolve") else resolver
    carrier = resolve(auth.secret_location)
    out = forward(_params(auth.model, base_dir), carrier.data)
    try:
        stego = codec.align(out.stego, len(auth.secret_difference))
        return codec.recover(stego, auth.secret_difference).tobytes()
    except (SumOutOfRange, OutputTooShort) as exc:
        raise CarrierChanged(f"set {auth.set_index}: {exc}") from exc


@dataclass
class ExtractionResult:
    message: bytes
    set_index: int
    failures: list[tuple[int, str]]


def extract_first_valid(sets: Sequence[AuthorizationSet], verification: VerificationInfo,
                        resolver, workers: int = 1, base_dir=None) -> ExtractionResult:
    """Try sets in ascending ``set_index``; the first verified extraction wins."""
    ordered = sorted(sets, key=lambda s: s.set_index)

    def attempt(auth):
        try:
            msg = extract(auth, resolver, base_dir)
        except (ExtractionError, ResourceError, UsageError) as exc:
            return None, exc
        if not verify(msg, verification):
            return None, None
        return msg, None

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(attempt, ordered))
    else:
        results = None
    failures, errors = [], []
    for i, auth in enumerate(ordered):
        msg, exc = results[i] if results is not None else attempt(auth)
        if msg is not None:
            return ExtractionResult(msg, auth.set_index, failures)
        if exc is None:
            reason = "VerificationFailed: extracted message does not match verification info"
        else:
            reason = f"{type(exc).__name__}: {exc}"
        log.info("set %d failed: %s", auth.set_index, reason)
        failures.append((auth.set_index, reason))
        errors.append(exc)
    raise AllSetsFailed(failures, errors)


def hide_redundant(message, carriers: Sequence[CarrierRecord], models: Sequence[ModelRef],
                   m: int | None = None, media_type: str = "application/octet-stream",
                   base_dir=None) -> Bundle:
    """One authorization set per (carrier, model) pair, all for the same message."""
    if not carriers or len(carriers) != len(models):
        raise UsageError("need equally many carriers and models, at least one of each")
    msg = _as_message(message)
    m = min(DEFAULT_M, len(msg)) if m is None else m
    verification = make_verification(msg, m)
    sets = [hide(msg, c, mod, set_index=i, base_dir=base_dir) for i, (c, mod) in enumerate(zip(carriers, models))]
    return Bundle(sets, verification, media_type=media_type)


def extract_redundant(bundle: Bundle, resolver, workers: int = 1, base_dir=None) -> bytes:
    return extract_first_valid(bundle.sets, bundle.verification, resolver, workers, base_dir).message


# ---------------------------------------------------------------------------
# JSON format


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str) -> bytes:
    try:
        return base64.b64decode(text.encode("ascii"), validate=True)
    except (binascii.Error, ValueError):
        raise BundleFormatError("invalid base64 payload") from None


def _verification_json(v: VerificationInfo | None):
    if v is None:
        return None
    return {"m": v.m, "total_len": v.total_len, "tail": _b64(v.tail)}


def _verification_from(d) -> VerificationInfo | None:
    if d is None:
        return None
    return VerificationInfo(_unb64(d["tail"]), int(d["m"]), int(d["total_len"]))


class _ModelTable:
    """Deduplicates models across sets; keyed by SHA-256 of the serialized form."""

    def __init__(self):
        self.entries: dict[str, dict] = {}
        self._seen: dict[int, str] = {}

    def key(self, model: ModelRef) -> str:
        if id(model) in self._seen:
            return self._seen[id(model)]
        if isinstance(model, ModelFileRef):
            key = model.sha256
            entry = {"path": model.path, "sha256": model.sha256}
        else:
            blob = serialize_model(model)
            key = hashlib.sha256(blob).hexdigest()
            entry = {"embedded": _b64(blob)}
        self.entries.setdefault(key, entry)
        self._seen[id(model)] = key
        return key


def _models_from(table: dict) -> dict[str, ModelRef]:
    out = {}
    for key, entry in table.items():
        if "embedded" in entry:
            blob = _unb64(entry["embedded"])
            if hashlib.sha256(blob).hexdigest() != key:
                raise CorruptModel(f"embedded model {key[:12]} does not match its key")
            out[key] = deserialize_model(blob)
        elif "path" in entry:
            out[key] = ModelFileRef(entry["path"], entry["sha256"])
        else:
            raise BundleFormatError(f"model entry {key[:12]} has neither payload nor path")
    return out


def _header(bundle: Bundle, kind: str) -> dict:
    return {"format": "refsteg", "kind": kind, "format_version": bundle.format_version, "nonce": bundle.nonce}


def _location_part(s: AuthorizationSet) -> dict:
    return {"set_index": s.set_index, "secret_number": s.secret_number, "location": str(s.secret_location)}


def _difference_part(s: AuthorizationSet) -> dict:
    d = {
        "set_index": s.set_index,
        "secret_number": s.secret_number,
        "codec_scheme": s.codec_scheme,
        "difference": s.secret_difference.tolist(),
    }
    if s.verification is not None:
        d["verification"] = _verification_json(s.verification)
    return d


def _difference_header(bundle: Bundle) -> dict:
    d = {"verification": _verification_json(bundle.verification), "media_type": bundle.media_type}
    if bundle.plan is not None:
        d["plan"] = {"P": bundle.plan.P, "chunk_len": bundle.plan.chunk_len, "total_len": bundle.plan.total_len}
    return d


def to_dict(bundle: Bundle) -> dict:
    table = _ModelTable()
    sets = []
    for s in bundle.sets:
        entry = {**_location_part(s), **_difference_part(s), "model": table.key(s.model)}
        sets.append(entry)
    return {**_header(bundle, "bundle"), **_difference_header(bundle), "models": table.entries, "sets": sets}


def dumps(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n"


def to_json(bundle: Bundle) -> str:
    return dumps(to_dict(bundle))


def _check_header(d: dict, kind: str):
    if not isinstance(d, dict) or d.get("format") != "refsteg":
        raise BundleFormatError("not a refsteg document")
    if d.get("kind") != kind:
        raise BundleFormatError(f"expected a {kind!r} document, got {d.get('kind')!r}")
    if d.get("format_version") != BUNDLE_VERSION:
        raise BundleFormatError(f"unsupported bundle version {d.get('format_version')}")


def _build(d: dict, sets_loc, sets_diff, sets_model, models) -> Bundle:
    sets = []
    for idx in sorted(sets_diff):
        if idx not in sets_loc or idx not in sets_model:
            raise IncompleteAuthorization(f"set {idx} lacks a location or a model")
        diff_part, loc_part = sets_diff[idx], sets_loc[idx]
        if diff_part.get("secret_number") != loc_part.get("secret_number"):
            raise ChannelArtifactMismatch(f"set {idx}: secret numbers disagree across channels")
        key = sets_model[idx]
        if key not in models:
            raise IncompleteAuthorization(f"set {idx} references unknown model {key[:12]}")
        sets.append(
            AuthorizationSet(
                secret_difference=np.array(diff_part["difference"], dtype=np.int16),
                secret_location=SecretLocation.parse(loc_part["location"]),
                model=models[key],
                codec_scheme=diff_part["codec_scheme"],
                set_index=idx,
                secret_number=diff_part.get("secret_number"),
                verification=_verification_from(diff_part.get("verification")),
            )
        )
    if set(sets_loc) - set(sets_diff) or set(sets_model) - set(sets_diff):
        raise IncompleteAuthorization("location or model given for a set with no difference")
    plan = d.get("plan")
    return Bundle(
        sets=sets,
        verification=_verification_from(d["verification"]),
        nonce=d["nonce"],
        plan=SplitPlan(plan["P"], plan["chunk_len"], plan["total_len"]) if plan else None,
        media_type=d.get("media_type", "application/octet-stream"),
        format_version=d["format_version"],
    )


def from_dict(d: dict) -> Bundle:
    _check_header(d, "bundle")
    try:
        models = _models_from(d["models"])
        by_idx = {s["set_index"]: s for s in d["sets"]}
        if len(by_idx) != len(d["sets"]):
            raise BundleFormatError("duplicate set_index")
        for s in d["sets"]:
            for key in ("difference", "location", "model"):
                if key not in s:
                    raise IncompleteAuthorization(f"set {s.get('set_index')} has no {key}")
        return _build(d, by_idx, by_idx, {i: s["model"] for i, s in by_idx.items()}, models)
    except KeyError as exc:
        raise BundleFormatError(f"missing field {exc}") from None


def from_json(text: str) -> Bundle:
    try:
        return from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"bundle is not valid JSON: {exc}") from None


def save_bundle(bundle: Bundle, path) -> None:
    Path(path).write_text(to_json(bundle), encoding="utf-8")


def load_bundle(path) -> Bundle:
    return from_json(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# channel packaging


@dataclass(frozen=True)
class ChannelArtifacts:
    locations: str
    differences: str
    models: str

    FILENAMES = ("locations.json", "differences.json", "models.json")

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        for name, text in zip(self.FILENAMES, (self.locations, self.differences, self.models)):
            (out / name).write_text(text, encoding="utf-8")
            paths.append(out / name)
        return paths

    @classmethod
    def read(cls, locations, differences, models) -> "ChannelArtifacts":
        return cls(*(Path(p).read_text(encoding="utf-8") for p in (locations, differences, models)))


def package_channels(bundle: Bundle) -> ChannelArtifacts:
    """Split a bundle into three documents, one per authorization element.

    Verification info and the split plan ride with the differences; every
    document carries the bundle nonce so mixed-up artifacts are caught.
    """
    table = _ModelTable()
    locations = {**_header(bundle, "locations"), "sets": [_location_part(s) for s in bundle.sets]}
    differences = {
        **_header(bundle, "differences"),
        **_difference_header(bundle),
        "sets": [_difference_part(s) for s in bundle.sets],
    }
    model_sets = [{"set_index": s.set_index, "model": table.key(s.model)} for s in bundle.sets]
    models = {**_header(bundle, "models"), "models": table.entries, "sets": model_sets}
    return ChannelArtifacts(dumps(locations), dumps(differences), dumps(models))


def repackage(locations: str, differences: str, models: str) -> Bundle:
    """Inverse of :func:`package_channels`; all three artifacts are required."""
    if locations is None or differences is None or models is None:
        raise IncompleteAuthorization("all three channel artifacts are required")
    try:
        loc, dif, mod = (json.loads(t) for t in (locations, differences, models))
    except json.JSONDecodeError as exc:
        raise BundleFormatError(f"channel artifact is not valid JSON: {exc}") from None
    _check_header(loc, "locations")
    _check_header(dif, "differences")
    _check_header(mod, "models")
    if not loc["nonce"] == dif["nonce"] == mod["nonce"]:
        raise ChannelArtifactMismatch("channel artifacts come from different bundles")
    try:
        return _build(
            dif,
            {s["set_index"]: s for s in loc["sets"]},
            {s["set_index"]: s for s in dif["sets"]},
            {s["set_index"]: s["model"] for s in mod["sets"]},
            _models_from(mod["models"]),
        )
    except KeyError as exc:
        raise BundleFormatError(f"missing field {exc}") from None
