import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from refsteg import codec
from refsteg.codec import AlignmentPolicy, align, decode_text, diff, encode_text, recover
from refsteg.errors import ElementOutOfRange, LengthMismatch, OutputTooShort, SumOutOfRange

POT = [112, 111, 116, 44, 32, 102, 108, 111, 119, 101, 114, 112, 111, 116]
KNIFE = [107, 110, 105, 102, 101]
KNIFE_DIFF = [-5, -1, -11, 58, 69]


def test_encode_known_arrays():
    assert encode_text("knife").tolist() == KNIFE
    assert encode_text("pot, flowerpot").tolist() == POT
    assert encode_text("").tolist() == []


def test_decode_known_arrays():
    assert decode_text(KNIFE) == "knife"
    assert decode_text([]) == ""


@pytest.mark.parametrize("bad", [[-1], [256], [0, 300]])
def test_decode_rejects_out_of_range(bad):
    with pytest.raises(ElementOutOfRange):
        decode_text(bad)


@given(st.binary(max_size=512))
def test_text_roundtrip(data):
    text = decode_text(list(data))
    assert encode_text(text).tobytes() == data
    assert decode_text(encode_text(text)) == text


def test_align_truncates_to_prefix():
    assert align(POT, AlignmentPolicy(5)).tolist() == POT[:5]
    assert align(POT, len(POT)).tolist() == POT
    with pytest.raises(OutputTooShort):
        align([1, 2, 3], 5)


def test_diff_and_recover_knife_example():
    d = diff(KNIFE, POT[:5])
    assert d.tolist() == KNIFE_DIFF
    assert d.dtype == np.int16
    assert recover(POT[:5], KNIFE_DIFF).tolist() == KNIFE


def test_diff_identity_and_zero_recover():
    x = list(range(0, 256, 7))
    assert not diff(x, x).any()
    assert recover(x, np.zeros(len(x), dtype=np.int16)).tolist() == x


def test_length_and_range_errors():
    with pytest.raises(LengthMismatch):
        diff([1, 2], [1])
    with pytest.raises(LengthMismatch):
        recover([1, 2], [0])
    with pytest.raises(SumOutOfRange):
        recover([250], [10])
    with pytest.raises(SumOutOfRange):
        recover([3], [-4])


@given(st.data())
def test_diff_matches_elementwise_definition(data):
    n = data.draw(st.integers(0, 64))
    m = data.draw(st.lists(st.integers(0, 255), min_size=n, max_size=n))
    s = data.draw(st.lists(st.integers(0, 255), min_size=n, max_size=n))
    d = diff(m, s)
    assert d.tolist() == [a - b for a, b in zip(m, s)]
    assert all(-255 <= v <= 255 for v in d.tolist())
    assert recover(s, d).tolist() == m


def test_recover_roundtrip_1000_random_pairs(rng):
    for _ in range(1000):
        n = int(rng.integers(0, 200))
        m = rng.integers(0, 256, n)
        s = rng.integers(0, 256, n)
        assert np.array_equal(recover(s, diff(m, s)), m)


def test_scheme_name():
    assert codec.SCHEME == "sub-v1"
