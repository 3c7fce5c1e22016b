"""Byte/text conversion and difference coding.

A message is hidden as ``message - stego`` element by element, using plain
signed subtraction, so differences live in [-255, 255] and are carried as
int16. Recovery adds the difference back onto a re-computed stego output.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import ElementOutOfRange, LengthMismatch, OutputTooShort, SumOutOfRange

SCHEME = "sub-v1"

# latin-1 maps every byte to exactly one code point, so text <-> bytes is lossless
DEFAULT_ENCODING = "latin-1"

ArrayLike = Union[Sequence[int], np.ndarray, bytes, bytearray]


def as_bytes_array(values: ArrayLike) -> np.ndarray:
    """Validate ``values`` as byte-valued and return them as a uint8 array."""
    if isinstance(values, (bytes, bytearray, memoryview)):
        return np.frombuffer(bytes(values), dtype=np.uint8).copy()
    arr = np.asarray(values)
    if arr.size == 0:
        return np.zeros(0, dtype=np.uint8)
    if arr.ndim != 1 or not np.issubdtype(arr.dtype, np.integer):
        raise ElementOutOfRange("expected a flat sequence of integers")
    if arr.min() < 0 or arr.max() > 255:
        bad = int(np.flatnonzero((arr < 0) | (arr > 255))[0])
        raise ElementOutOfRange(f"element {bad} = {int(arr[bad])} outside [0, 255]")
    return arr.astype(np.uint8)


def encode_text(text: str, encoding: str = DEFAULT_ENCODING) -> np.ndarray:
    return np.frombuffer(text.encode(encoding), dtype=np.uint8).copy()


def decode_text(arr: ArrayLike, encoding: str = DEFAULT_ENCODING) -> str:
    return as_bytes_array(arr).tobytes().decode(encoding)


@dataclass(frozen=True)
class AlignmentPolicy:
    target_len: int
    mode: str = "truncate-output"


def align(output: ArrayLike, policy: AlignmentPolicy | int) -> np.ndarray:
    """Keep the first ``target_len`` elements of ``output``."""
    if isinstance(policy, int):
        policy = AlignmentPolicy(policy)
    if policy.mode != "truncate-output":
        raise ValueError(f"unknown alignment mode {policy.mode!r}")
    out = as_bytes_array(output)
    if policy.target_len < 0:
        raise ValueError("target_len must be non-negative")
    if policy.target_len > len(out):
        raise OutputTooShort(
            f"model output has {len(out)} elements, message needs {policy.target_len}"
        )
    return out[: policy.target_len]


def diff(message: ArrayLike, stego: ArrayLike) -> np.ndarray:
    m = as_bytes_array(message).astype(np.int16)
    s = as_bytes_array(stego).astype(np.int16)
    if len(m) != len(s):
        raise LengthMismatch(f"message length {len(m)} != stego length {len(s)}")
    return m - s


def recover(stego: ArrayLike, difference: ArrayLike) -> np.ndarray:
    s = as_bytes_array(stego).astype(np.int32)
    d = np.asarray(difference, dtype=np.int32)
    if d.ndim != 1 or len(s) != len(d):
        raise LengthMismatch(f"stego length {len(s)} != difference length {len(d)}")
    out = s + d
    if out.size and (out.min() < 0 or out.max() > 255):
        raise SumOutOfRange("recovered value outside [0, 255]; carrier or model changed")
    return out.astype(np.uint8)
