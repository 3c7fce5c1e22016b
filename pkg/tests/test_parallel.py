import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from refsteg import CarrierSupplier, random_model
from refsteg.errors import (
    CorpusExhausted,
    DuplicateChunk,
    InvalidChunkLen,
    InvalidInput,
    MissingChunk,
    OutputTooShort,
    VerificationFailed,
)
from refsteg.fixtures import SECOND_MESSAGE
from refsteg.parallel import extract_parallel, hide_parallel, merge, plan_split, secret_number, split
from refsteg.protocol import from_json, to_json


def test_secret_numbers():
    assert secret_number(0) == "000000"
    assert secret_number(4006) == "004006"
    with pytest.raises(InvalidInput):
        secret_number(10**6)


def test_split_ten_by_four():
    parts = split(bytes(range(10)), 4)
    assert [n for n, _ in parts] == ["000000", "000001", "000002"]
    assert [len(c) for _, c in parts] == [4, 4, 2]
    assert plan_split(10, 4).P == 3


def test_split_single_chunk():
    assert split(b"abc", 3) == [("000000", b"abc")]
    assert split(b"abc", 100) == [("000000", b"abc")]


def test_split_errors():
    with pytest.raises(InvalidInput):
        split(b"", 4)
    with pytest.raises(InvalidChunkLen):
        split(b"abc", 0)


@given(st.binary(min_size=1, max_size=500), st.integers(1, 64), st.randoms())
def test_merge_split_identity_under_permutation(msg, n, random):
    parts = split(msg, n)
    assert b"".join(c for _, c in parts) == msg
    assert all(len(c) == n for _, c in parts[:-1])
    random.shuffle(parts)
    assert merge(parts) == msg


def test_merge_reverse_and_errors():
    parts = split(b"abcdefghij", 3)
    assert merge(parts[::-1]) == b"abcdefghij"
    assert merge(parts, count=4) == b"abcdefghij"
    with pytest.raises(MissingChunk) as info:
        merge(parts[:1] + parts[2:])
    assert info.value.missing == [1]
    with pytest.raises(DuplicateChunk):
        merge(parts + parts[:1])


# ---------------------------------------------------------------- hide/extract


@pytest.fixture
def model(rng):
    return random_model(rng, 64, hidden=12)


def test_parallel_roundtrip_and_worker_independence(corpus, resolver, model, rng):
    msg = rng.integers(0, 256, 5000, dtype=np.uint8).tobytes()
    b1 = hide_parallel(msg, 64, CarrierSupplier(corpus, 512, seed=3), model, workers=1)
    b8 = hide_parallel(msg, 64, CarrierSupplier(corpus, 512, seed=3), model, workers=8)
    assert b1.plan.P == 79 and len(b1.sets) == 79
    assert all(a == b for a, b in zip(b1.sets, b8.sets))
    assert {s.secret_number for s in b1.sets} == {secret_number(i) for i in range(79)}
    assert len({s.secret_location for s in b1.sets}) == 79
    assert extract_parallel(b1, resolver, workers=1) == msg
    assert extract_parallel(b1, resolver, workers=8) == msg
    assert extract_parallel(from_json(to_json(b1)), resolver, workers=4) == msg


def test_parallel_default_chunk_len_is_model_output(corpus, resolver, model):
    bundle = hide_parallel(SECOND_MESSAGE, None, CarrierSupplier(corpus, 300, seed=1), model)
    assert bundle.plan.chunk_len == 64 and bundle.plan.P == 2
    assert extract_parallel(bundle, resolver) == SECOND_MESSAGE.encode()


def test_parallel_single_chunk(corpus, resolver, model):
    bundle = hide_parallel(b"short", 64, CarrierSupplier(corpus, 300, seed=1), model)
    assert len(bundle.sets) == 1 and bundle.sets[0].secret_number == "000000"
    assert extract_parallel(bundle, resolver) == b"short"


def test_sentence_string_layout(corpus, resolver, rng):
    # 100 sentences of 100 strings; one carrier per string
    sentences = [b"".join(bytes([65 + (i * 7 + j) % 26]) for j in range(100)) for i in range(100)]
    msg = b"".join(sentences)
    bundle = hide_parallel(msg, 1, CarrierSupplier(corpus, 256, seed=9, max_tries=256),
                           random_model(rng, 1, hidden=8), workers=4)
    assert len(bundle.sets) == 100 * 100
    by_number = {s.secret_number: s for s in bundle.sets}
    assert "004006" in by_number
    assert extract_parallel(bundle, resolver, workers=4) == msg


def test_partial_compromise_cannot_merge(corpus, resolver, model, rng):
    msg = rng.integers(0, 256, 400, dtype=np.uint8).tobytes()
    bundle = hide_parallel(msg, 64, CarrierSupplier(corpus, 400, seed=2), model)
    from refsteg.protocol import extract

    stolen = [(s.secret_number, extract(s, resolver)) for s in bundle.sets[:-2]]
    with pytest.raises(MissingChunk) as info:
        merge(stolen, count=bundle.plan.P)
    assert info.value.missing == [5, 6]
    with pytest.raises(MissingChunk):
        merge(stolen[:2] + stolen[3:])
    bundle.sets = bundle.sets[:-2]
    with pytest.raises(MissingChunk):
        extract_parallel(bundle, resolver)


def test_mutated_chunk_carrier_fails_verification(tmp_path, corpus, model, rng):
    from refsteg import CarrierResolver

    msg = rng.integers(0, 256, 700, dtype=np.uint8).tobytes()
    bundle = hide_parallel(msg, 64, CarrierSupplier(corpus, 1024, seed=5), model)
    target = bundle.sets[4].secret_location.address
    victim = corpus.path(target)
    data = bytearray(victim.read_bytes())
    for s, e in bundle.sets[4].secret_location.segments:
        data[s : e] = rng.integers(0, 256, e - s, dtype=np.uint8).tobytes()
    victim.write_bytes(bytes(data))
    with pytest.raises(VerificationFailed):
        extract_parallel(bundle, CarrierResolver(corpus=corpus))


def test_per_chunk_redundancy(tmp_path, model, rng):
    from conftest import write_carrier
    from refsteg import CarrierResolver

    draws = iter(range(10**6))

    def supplier():
        # replicas alternate between two directories: even draws in a/, odd in b/
        k = next(draws)
        data = rng.integers(0, 256, 900, dtype=np.uint8).tobytes()
        return write_carrier(tmp_path / "ab"[k % 2] / f"{k}.bin", data)

    msg = rng.integers(0, 256, 300, dtype=np.uint8).tobytes()
    bundle = hide_parallel(msg, 64, supplier, model, redundancy=2)
    assert len(bundle.sets) == 10
    assert all(s.verification is not None for s in bundle.sets)
    for p in (tmp_path / "a").iterdir():
        p.write_bytes(rng.integers(0, 256, 900, dtype=np.uint8).tobytes())
    assert extract_parallel(bundle, CarrierResolver(), workers=3) == msg
    for p in (tmp_path / "b").iterdir():
        p.unlink()
    with pytest.raises(VerificationFailed):
        extract_parallel(bundle, CarrierResolver())


def test_plan_time_capacity_check(corpus, rng):
    with pytest.raises(OutputTooShort):
        hide_parallel(b"x" * 100, 50, CarrierSupplier(corpus, 300, seed=0), random_model(rng, 10))


def test_supplier_exhaustion(tmp_path, rng):
    from refsteg import Corpus

    c = Corpus(tmp_path / "tiny")
    c.add(b"0123456789")
    with pytest.raises(CorpusExhausted):
        hide_parallel(b"x" * 20, 4, CarrierSupplier(c, 10, seed=0), random_model(rng, 4))
