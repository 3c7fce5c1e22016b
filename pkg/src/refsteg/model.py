"""The hiding model: a small feedforward net evaluated in fixed point.

Inference never touches floating point. Features are integers, weights and
biases are Q16.16 int32 values, and each layer computes::

    acc = features @ weights + bias        # int64, wraps on overflow
    act = clip(acc >> 16, 0, 2**24)        # floor shift, clamped ReLU

so a sender and a receiver on different machines get bit-identical outputs.
Training happens in float64 and only the quantized result is ever shared.
"""

from __future__ import annotations

import binascii
import hashlib
import logging
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CorruptModel,
    EmptyCarrier,
    EmptyDataset,
    InconsistentOutputLength,
    InvalidModel,
    MagnitudeOverflow,
    ShapeMismatch,
    UnsupportedVersion,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"BSHM"
FRAC_BITS = 16
ONE = 1 << FRAC_BITS
ACT_MAX = 1 << 24
HIST_BINS = 256
N_CHUNKS = 64
FEATURE_DIM = HIST_BINS + N_CHUNKS

NET_TYPES = ("feedforward",)
ACTIVATIONS = ("clamped-relu",)
HEADS = ("bytes", "label")

# scale of hidden activations relative to the float net they were trained as
HIDDEN_SCALE = 256.0


@dataclass(eq=False)
class ModelParams:
    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]  # int32, shape (in, out)
    biases: tuple[np.ndarray, ...]  # int32, shape (out,)
    output_head: str = "bytes"
    output_len: int = 0
    label_table: tuple[str, ...] | None = None
    net_type: str = "feedforward"
    activation: str = "clamped-relu"
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        self.weights = tuple(np.asarray(w, dtype=np.int32) for w in self.weights)
        self.biases = tuple(np.asarray(b, dtype=np.int32) for b in self.biases)
        if self.label_table is not None:
            self.label_table = tuple(self.label_table)
        if self.output_head == "bytes" and not self.output_len and self.layer_dims:
            self.output_len = self.layer_dims[-1]

    def validate(self) -> "ModelParams":
        if self.format_version != FORMAT_VERSION:
            raise UnsupportedVersion(f"model format version {self.format_version}")
        if self.net_type not in NET_TYPES:
            raise InvalidModel(f"unsupported network type {self.net_type!r}")
        if self.activation not in ACTIVATIONS:
            raise InvalidModel(f"unsupported activation {self.activation!r}")
        if self.output_head not in HEADS:
            raise InvalidModel(f"unknown output head {self.output_head!r}")
        dims = self.layer_dims
        if len(dims) < 2 or min(dims) < 1:
            raise ShapeMismatch(f"layer_dims {dims} needs >= 2 positive entries")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ShapeMismatch("one weight matrix and bias vector per layer expected")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]):
                raise ShapeMismatch(f"layer {i} weights {w.shape}, expected {(dims[i], dims[i + 1])}")
            if b.shape != (dims[i + 1],):
                raise ShapeMismatch(f"layer {i} bias {b.shape}, expected {(dims[i + 1],)}")
        if self.output_head == "bytes":
            if self.output_len != dims[-1]:
                raise ShapeMismatch(f"output_len {self.output_len} != output dim {dims[-1]}")
        else:
            if not self.label_table:
                raise InvalidModel("label head needs a non-empty label table")
            if len(self.label_table) != dims[-1]:
                raise ShapeMismatch(
                    f"{len(self.label_table)} labels for {dims[-1]} output nodes"
                )
        return self

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def __eq__(self, other):
        if not isinstance(other, ModelParams):
            return NotImplemented
        return (
            self.format_version == other.format_version
            and self.net_type == other.net_type
            and self.activation == other.activation
            and self.output_head == other.output_head
            and self.output_len == other.output_len
            and self.layer_dims == other.layer_dims
            and self.label_table == other.label_table
            and len(self.weights) == len(other.weights)
            and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
            and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases))
        )

    def digest(self) -> str:
        return hashlib.sha256(serialize_model(self)).hexdigest()


@dataclass
class ModelOutput:
    stego: np.ndarray
    label: str | None = None
    score: float | None = None
    raw: np.ndarray | None = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# features and inference


def _as_buffer(carrier: bytes | np.ndarray) -> np.ndarray:
    if isinstance(carrier, np.ndarray):
        return carrier.astype(np.uint8, copy=False)
    return np.frombuffer(carrier, dtype=np.uint8)


def featurize(carrier: bytes | np.ndarray) -> np.ndarray:
    """Byte histogram (256) followed by 64 chunk sums, each mod 65536.

    Chunk ``k`` covers bytes ``[k*n//64, (k+1)*n//64)``; for carriers shorter
    than 64 bytes some chunks are empty and sum to zero.
    """
    buf = _as_buffer(carrier)
    n = len(buf)
    if n == 0:
        raise EmptyCarrier("carrier has no bytes")
    hist = np.bincount(buf, minlength=HIST_BINS).astype(np.int64)
    bounds = (np.arange(N_CHUNKS + 1, dtype=np.int64) * n) // N_CHUNKS
    csum = np.concatenate(([0], np.cumsum(buf, dtype=np.int64)))
    chunks = (csum[bounds[1:]] - csum[bounds[:-1]]) % 65536
    return np.concatenate((hist, chunks))


def forward_features(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Fixed-point evaluation of every layer; returns the final activations."""
    act = np.asarray(features, dtype=np.int64)
    if act.shape != (params.input_dim,):
        raise ShapeMismatch(f"feature vector {act.shape}, model expects ({params.input_dim},)")
    with np.errstate(over="ignore"):
        for w, b in zip(params.weights, params.biases):
            acc = act @ w.astype(np.int64) + b.astype(np.int64)
            act = np.clip(acc >> FRAC_BITS, 0, ACT_MAX)
    return act


def forward(params: ModelParams, carrier: bytes | np.ndarray) -> ModelOutput:
    params.validate()
    raw = forward_features(params, featurize(carrier))
    if params.output_head == "bytes":
        return ModelOutput(stego=((raw >> 8) & 0xFF).astype(np.uint8), raw=raw)
    idx = int(np.argmax(raw))
    total = int(raw.sum())
    score = int(raw[idx]) / total if total > 0 else 0.0
    label = params.label_table[idx]
    stego = np.frombuffer(label.encode("utf-8"), dtype=np.uint8).copy()
    log.debug("label head: %r score=%.5f", label, score)
    return ModelOutput(stego=stego, label=label, score=score, raw=raw)


# ---------------------------------------------------------------------------
# quantization


def quantize(values) -> np.ndarray:
    """Map reals to Q16.16 int32, rounding half away from zero."""
    x = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(x)) or (x.size and np.abs(x).max() >= 2.0**15):
        raise MagnitudeOverflow("values must be finite with magnitude < 2**15")
    q = np.sign(x) * np.floor(np.abs(x) * ONE + 0.5)
    return q.astype(np.int32)


def quantize_params(float_weights, float_biases):
    return (
        tuple(quantize(w) for w in float_weights),
        tuple(quantize(b) for b in float_biases),
    )


# ---------------------------------------------------------------------------
# float training


@dataclass
class TrainingConfig:
    epochs: int = 200
    learning_rate: float = 0.01
    seed: int = 0
    loss: str = "mean-squared-error"
    hidden: tuple[int, ...] = (32,)
    batch_size: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.loss != "mean-squared-error":
            raise ValueError(f"unsupported loss {self.loss!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def init_float_params(layer_dims: Sequence[int], seed: int, output_bias: float = 0.1):
    """He-normal weights; small positive biases keep clamped units alive."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for i, (n_in, n_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out)))
        last = i == len(layer_dims) - 2
        biases.append(np.full(n_out, output_bias if last else 0.1))
    return weights, biases


def float_forward(weights, biases, x: np.ndarray):
    """Float twin of the fixed-point net. Returns the activations of every layer."""
    acts = [x]
    for w, b in zip(weights, biases):
        acts.append(np.maximum(acts[-1] @ w + b, 0.0))
    return acts


def loss_and_grads(weights, biases, x: np.ndarray, y: np.ndarray):
    """Mean squared error over a batch and its backprop gradients."""
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    acts = float_forward(weights, biases, x)
    err = acts[-1] - y
    loss = float(np.mean(err**2))
    delta = 2.0 * err / err.size
    gw, gb = [None] * len(weights), [None] * len(biases)
    for i in reversed(range(len(weights))):
        delta = delta * (acts[i + 1] > 0)
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        delta = delta @ weights[i].T
    return loss, gw, gb


def _export_factors(n_layers: int, out_scale: float):
    """Per-layer (weight, bias) multipliers mapping the float net to integer units.

    Hidden activations become ``HIDDEN_SCALE * h`` and the output becomes
    ``out_scale * o``; input scaling is folded in separately.
    """
    factors = []
    for i in range(n_layers):
        act_in = 1.0 if i == 0 else HIDDEN_SCALE
        act_out = out_scale if i == n_layers - 1 else HIDDEN_SCALE
        factors.append((act_out / act_in, act_out))
    return factors


def export_params(weights, biases, input_scale: np.ndarray, out_scale: float):
    factors = _export_factors(len(weights), out_scale)
    ew, eb = [], []
    for i, ((w, b), (fw, fb)) in enumerate(zip(zip(weights, biases), factors)):
        w = w * fw
        if i == 0:
            w = w / input_scale[:, None]
        ew.append(w)
        eb.append(b * fb)
    return quantize_params(ew, eb)


def _clip_to_exportable(weights, biases, input_scale, out_scale):
    limit = 2.0**15 - 1.0
    for i, (fw, fb) in enumerate(_export_factors(len(weights), out_scale)):
        wl = limit / fw
        if i == 0:
            wl = (limit * input_scale / fw)[:, None]
        np.clip(weights[i], -wl, wl, out=weights[i])
        np.clip(biases[i], -limit / fb, limit / fb, out=biases[i])


def _targets(dataset, output_head, label_table, output_len):
    rows = []
    for _, expected in dataset:
        exp = np.asarray(
            np.frombuffer(expected, dtype=np.uint8) if isinstance(expected, (bytes, bytearray)) else expected,
            dtype=np.int64,
        )
        if output_head == "bytes":
            if len(exp) != output_len:
                raise InconsistentOutputLength(
                    f"expected output of length {len(exp)}, model emits {output_len}"
                )
            # centre of the byte's bucket in the (v >> 8) & 0xFF head
            rows.append((exp + 0.5) / 256.0)
        else:
            text = bytes(exp.astype(np.uint8)).decode("utf-8")
            if text not in label_table:
                raise InconsistentOutputLength(f"expected label {text!r} not in label table")
            onehot = np.zeros(len(label_table))
            onehot[label_table.index(text)] = 1.0
            rows.append(onehot)
    return np.array(rows)


def train_with_history(
    dataset: Sequence[tuple[bytes, Iterable[int]]],
    config: TrainingConfig,
    output_len: int | None = None,
    label_table: Sequence[str] | None = None,
) -> tuple[ModelParams, list[float]]:
    """Fit a feedforward net by plain SGD and quantize it.

    ``history`` holds the full-dataset float loss before training and after
    every epoch.
    """
    if not dataset:
        raise EmptyDataset("training needs at least one (carrier, expected) pair")
    output_head = "label" if label_table else "bytes"
    if output_head == "bytes":
        if output_len is None:
            output_len = len(dataset[0][1])
        n_out = output_len
    else:
        label_table = list(label_table)
        n_out = len(label_table)
    y = _targets(dataset, output_head, label_table, output_len)
    x = np.array([featurize(c) for c, _ in dataset], dtype=np.float64)
    input_scale = np.maximum(np.abs(x).max(axis=0), 1.0)
    xs = x / input_scale
    # one output unit of the float net is 2**16 integer units: a whole byte bucket range
    out_scale = float(ONE)

    dims = (FEATURE_DIM, *config.hidden, n_out)
    weights, biases = init_float_params(dims, config.seed, output_bias=float(y.mean()))
    _clip_to_exportable(weights, biases, input_scale, out_scale)
    rng = np.random.default_rng(config.seed + 1)
    history = [loss_and_grads(weights, biases, xs, y)[0]]
    for _ in range(config.epochs):
        order = rng.permutation(len(xs))
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            _, gw, gb = loss_and_grads(weights, biases, xs[idx], y[idx])
            for w, g in zip(weights, gw):
                w -= config.learning_rate * g
            for b, g in zip(biases, gb):
                b -= config.learning_rate * g
            _clip_to_exportable(weights, biases, input_scale, out_scale)
        history.append(loss_and_grads(weights, biases, xs, y)[0])
    qw, qb = export_params(weights, biases, input_scale, out_scale)
    params = ModelParams(
        layer_dims=dims,
        weights=qw,
        biases=qb,
        output_head=output_head,
        output_len=n_out if output_head == "bytes" else 0,
        label_table=tuple(label_table) if label_table else None,
    ).validate()
    log.info("trained %s: loss %.6g -> %.6g", dims, history[0], history[-1])
    return params, history


def train(dataset, config: TrainingConfig, output_len=None, label_table=None) -> ModelParams:
    return train_with_history(dataset, config, output_len, label_table)[0]


def random_model(
    rng: np.random.Generator,
    output_len: int,
    hidden: int = 16,
    label_table: Sequence[str] | None = None,
) -> ModelParams:
    """A random bytes-head (or label-head) model that reacts to single-byte edits.

    Histogram weights are large so one moved byte shifts hidden units by
    thousands of integer steps; hidden biases sit mid-range so typical carriers
    of a few KiB neither zero nor saturate the clamp.
    """
    n_out = len(label_table) if label_table else output_len
    w1 = np.concatenate(
        (
            rng.uniform(-2000.0, 2000.0, size=(HIST_BINS, hidden)),
            rng.uniform(-4.0, 4.0, size=(N_CHUNKS, hidden)),
        )
    )
    b1 = rng.uniform(-2.0**14, 2.0**14, size=hidden)
    w2 = rng.uniform(0.0, 1.0, size=(hidden, n_out))
    b2 = rng.uniform(0.0, 2.0**14, size=n_out)
    qw, qb = quantize_params([w1, w2], [b1, b2])
    return ModelParams(
        layer_dims=(FEATURE_DIM, hidden, n_out),
        weights=qw,
        biases=qb,
        output_head="label" if label_table else "bytes",
        output_len=0 if label_table else n_out,
        label_table=tuple(label_table) if label_table else None,
    ).validate()


# ---------------------------------------------------------------------------
# serialization
#
# magic "BSHM" | u8 version | u8 net_type | u8 activation | u8 head
# | u32 output_len | u16 n_dims | u32 dims[n] | per layer: i32 W (row-major), i32 b
# | u32 n_labels | per label: u32 len, utf-8 bytes | u32 crc32 of all preceding


def serialize_model(params: ModelParams) -> bytes:
    params.validate()
    parts = [
        MAGIC,
        struct.pack(
            "<BBBBIH",
            params.format_version,
            NET_TYPES.index(params.net_type),
            ACTIVATIONS.index(params.activation),
            HEADS.index(params.output_head),
            params.output_len,
            len(params.layer_dims),
        ),
        struct.pack(f"<{len(params.layer_dims)}I", *params.layer_dims),
    ]
    for w, b in zip(params.weights, params.biases):
        parts.append(w.astype("<i4").tobytes())
        parts.append(b.astype("<i4").tobytes())
    labels = params.label_table or ()
    parts.append(struct.pack("<I", len(labels)))
    for label in labels:
        raw = label.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
    body = b"".join(parts)
    return body + struct.pack("<I", binascii.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptModel("model file truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def deserialize_model(data: bytes) -> ModelParams:
    data = bytes(data)
    if len(data) < 9 or data[:4] != MAGIC:
        raise CorruptModel("not a BSHM model file")
    if data[4] != FORMAT_VERSION:
        raise UnsupportedVersion(f"model format version {data[4]} (supported: {FORMAT_VERSION})")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if binascii.crc32(body) != crc:
        raise CorruptModel("checksum mismatch")
    r = _Reader(body)
    r.take(4)
    version, net, act, head, output_len, n_dims = r.unpack("<BBBBIH")
    try:
        net_type, activation, output_head = NET_TYPES[net], ACTIVATIONS[act], HEADS[head]
    except IndexError:
        raise CorruptModel("unknown enum code in model header") from None
    dims = r.unpack(f"<{n_dims}I")
    weights, biases = [], []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        weights.append(np.frombuffer(r.take(4 * n_in * n_out), dtype="<i4").reshape(n_in, n_out))
        biases.append(np.frombuffer(r.take(4 * n_out), dtype="<i4"))
    (n_labels,) = r.unpack("<I")
    labels = []
    for _ in range(n_labels):
        (n,) = r.unpack("<I")
        try:
            labels.append(r.take(n).decode("utf-8"))
        except UnicodeDecodeError:
            raise CorruptModel("label table is not valid UTF-8") from None
    if r.pos != len(body):
        raise CorruptModel("trailing bytes after label table")
    params = ModelParams(
        layer_dims=dims,
        weights=weights,
        biases=biases,
        output_head=output_head,
        output_len=output_len,
        label_table=tuple(labels) if labels else None,
        net_type=net_type,
        activation=activation,
        format_version=version,
    )
    try:
        return params.validate()
    except (ShapeMismatch, InvalidModel) as exc:
        raise CorruptModel(str(exc)) from exc


def save_model(params: ModelParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(params))


def load_model(path) -> ModelParams:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())
