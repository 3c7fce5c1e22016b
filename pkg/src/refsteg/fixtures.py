"""Desk-scale stand-ins for the worked "knife" example.

The original experiment ran a large pretrained image classifier on a photo of
a tree and got the (wrong) label ``"pot, flowerpot"`` with score 0.74342. Here
the photo is a small procedurally drawn PPM and the classifier is a two-layer
label-head model whose target-row bias is solved so that the carrier lands on
that label with approximately that score.
"""

from __future__ import annotations

import numpy as np

from .model import FEATURE_DIM, ModelParams, featurize, forward_features, quantize_params

LABELS = (
    "tench, Tinca tinca",
    "goldfish, Carassius auratus",
    "pot, flowerpot",
    "vase",
    "daisy",
    "knot",
    "birdhouse",
    "umbrella",
    "picket fence, paling",
    "greenhouse, nursery, glasshouse",
    "lakeside, lakeshore",
    "valley, vale",
)
TARGET_LABEL = "pot, flowerpot"
TARGET_SCORE = 0.74342
MESSAGE = "knife"
SECOND_MESSAGE = "We will meet at the place we met last week at 12 O'clock tomorrow morning"


def tree_image(width: int = 48, height: int = 48) -> bytes:
    """A binary PPM of a tree: green crown, brown trunk, sky and grass."""
    y, x = np.mgrid[0:height, 0:width]
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[...] = (135, 190, 235)
    img[y > height * 0.8] = (70, 150, 60)
    trunk = (abs(x - width / 2) < width * 0.06) & (y > height * 0.45) & (y <= height * 0.85)
    img[trunk] = (110, 75, 40)
    crown = (x - width / 2) ** 2 + ((y - height * 0.35) * 1.2) ** 2 < (width * 0.3) ** 2
    shade = ((x * 7 + y * 13) % 5).astype(np.uint8) * 6
    img[crown] = np.stack([20 + shade[crown], 110 + shade[crown], 35 + shade[crown]], axis=-1)
    header = f"P6\n{width} {height}\n255\n".encode("ascii")
    return header + img.tobytes()


def label_model(carrier: bytes, labels=LABELS, target: str = TARGET_LABEL,
                score: float = TARGET_SCORE, hidden: int = 16, seed: int = 2024) -> ModelParams:
    """Build a label-head model whose output on ``carrier`` is ``target``.

    All rows except the target's are random; the target row's bias is then
    solved in integer arithmetic so that its activation equals
    ``score / (1 - score)`` times the sum of the other activations.
    """
    rng = np.random.default_rng(seed)
    n = len(labels)
    t = labels.index(target)
    feats = featurize(carrier)
    scale = np.maximum(feats, 1).astype(np.float64)
    w1 = rng.normal(0.0, 1.0, size=(FEATURE_DIM, hidden)) / (scale[:, None] * np.sqrt(FEATURE_DIM)) * 400.0
    b1 = rng.uniform(100.0, 300.0, size=hidden)
    w2 = rng.uniform(0.0, 1.0, size=(hidden, n)) * 4.0 / hidden
    b2 = rng.uniform(40.0, 400.0, size=n)
    qw, qb = quantize_params([w1, w2], [b1, b2])
    params = ModelParams((FEATURE_DIM, hidden, n), qw, qb, output_head="label", label_table=tuple(labels))

    hidden_act = forward_features(
        ModelParams((FEATURE_DIM, hidden), qw[:1], qb[:1], output_len=hidden), feats
    )
    raw = forward_features(params, feats)
    others = int(raw.sum() - raw[t])
    want = round(score / (1.0 - score) * others)
    # acc >> 16 == want  <=>  acc in [want << 16, (want + 1) << 16)
    acc_wo_bias = int(hidden_act @ qw[1][:, t].astype(np.int64))
    bias = (want << 16) - acc_wo_bias
    biases = list(qb)
    biases[1] = biases[1].copy()
    biases[1][t] = np.int32(bias)
    return ModelParams((FEATURE_DIM, hidden, n), qw, biases, output_head="label",
                       label_table=tuple(labels)).validate()


def experiment1() -> tuple[bytes, ModelParams]:
    carrier = tree_image()
    return carrier, label_model(carrier)
