"""Difference operators on patch vectors and the learned patch metric.

A trained model scores a pair of patches ``x1, x2`` as

    score = v' M v + b,    v = diff(x1, x2)

with ``diff`` either plain subtraction (``sub``) or the log-ratio
(``lr``), and classifies the site as changed when the score is >= 0.
``lift`` maps a difference vector to the feature (1, vec(v v')) that
makes the score linear in (b, vec(M)); the trainer works in that space.

All metric arithmetic is float64: patches are float32 on disk, but the
quadratic feature space squares the dynamic range and float32 loses too
much there.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError
from .raster import INTENSITY_FLOOR

MODEL_MAGIC = b"SMCD"

OP_SUB = "sub"
OP_LR = "lr"
_OP_TAGS = {OP_SUB: 0, OP_LR: 1}
_TAG_OPS = {tag: op for op, tag in _OP_TAGS.items()}


@dataclass
class MetricModel:
    """Learned change metric: symmetric matrix ``m``, bias ``b``.

    ``d = patch_side**2`` is the patch area; ``m`` is d x d.
    """

    m: np.ndarray
    b: float
    op: str
    patch_side: int

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=np.float64)
        d = self.patch_side * self.patch_side
        if self.m.shape != (d, d):
            raise DataError(
                f"metric matrix shape {self.m.shape} does not match "
                f"patch side {self.patch_side} (expected {(d, d)})"
            )
        if self.op not in _OP_TAGS:
            raise DataError(f"unknown diff operator {self.op!r}")
        if not np.array_equal(self.m, self.m.T):
            raise DataError("metric matrix must be exactly symmetric")

    @property
    def d(self) -> int:
        return self.m.shape[0]


def diff_sub(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Elementwise difference x1 - x2, in float64."""
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise DataError(f"patch length mismatch: {x1.shape} vs {x2.shape}")
    return x1 - x2


def diff_lr(x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
    """Elementwise log-ratio ln(x1/x2), in float64.

    Requires strictly positive entries; intensity loading clamps to
    INTENSITY_FLOOR, so a nonpositive entry here means that clamp was
    bypassed upstream.
    """
    x1 = np.asarray(x1, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x1.shape != x2.shape:
        raise DataError(f"patch length mismatch: {x1.shape} vs {x2.shape}")
    if (x1 < INTENSITY_FLOOR).any() or (x2 < INTENSITY_FLOOR).any():
        raise DataError("log-ratio input has entries below the intensity floor")
    return np.log(x1) - np.log(x2)


_DIFF_FNS = {OP_SUB: diff_sub, OP_LR: diff_lr}


def diff_fn(op: str):
    """Look up the difference operator for an op tag."""
    try:
        return _DIFF_FNS[op]
    except KeyError:
        raise DataError(f"unknown diff operator {op!r}") from None


def mahalanobis(v: np.ndarray, m: np.ndarray) -> float:
    """Generalized squared distance v' M v."""
    v = np.asarray(v, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (v.size, v.size):
        raise DataError(f"matrix shape {m.shape} does not match vector length {v.size}")
    return float(v @ m @ v)


def score(x1: np.ndarray, x2: np.ndarray, model: MetricModel) -> float:
    """Decision value v' M v + b for one patch pair; >= 0 means changed."""
    v = diff_fn(model.op)(x1, x2)
    if v.size != model.d:
        raise DataError(f"patch length {v.size} does not match model dimension {model.d}")
    return mahalanobis(v, model.m) + model.b


def lift(v: np.ndarray) -> np.ndarray:
    """Quadratic feature map (1, vec(v v')) of length d**2 + 1.

    vec() stacks columns, so lift(v) . (b, vec(M)) == v' M v + b.
    """
    v = np.asarray(v, dtype=np.float64)
    out = np.empty(v.size * v.size + 1, dtype=np.float64)
    out[0] = 1.0
    out[1:] = np.outer(v, v).ravel(order="F")
    return out


def lift_matrix(vs: np.ndarray) -> np.ndarray:
    """Row-stack lift() over an (n, d) array of difference vectors."""
    vs = np.asarray(vs, dtype=np.float64)
    n, d = vs.shape
    out = np.empty((n, d * d + 1), dtype=np.float64)
    out[:, 0] = 1.0
    # outer products, column-major flattened: entry (i, j) of v v' sits at
    # column 1 + j*d + i
    out[:, 1:] = (vs[:, :, None] * vs[:, None, :]).reshape(n, d * d)
    return out


def model_from_weights(w: np.ndarray, op: str, patch_side: int) -> MetricModel:
    """Rebuild (M, b) from a primal weight vector w = (b, vec(M)).

    Only the symmetric part of M is determined by the quadratic
    features; the antisymmetric remainder is removed here.
    """
    w = np.asarray(w, dtype=np.float64)
    d = patch_side * patch_side
    if w.size != d * d + 1:
        raise DataError(f"weight vector length {w.size} does not match d={d}")
    m = w[1:].reshape(d, d, order="F")
    m = (m + m.T) / 2.0
    return MetricModel(m=m, b=float(w[0]), op=op, patch_side=patch_side)


def save_model(model: MetricModel, path) -> None:
    """Write a model file: magic, u32 patch side, u8 op, f64 b, then M row-major."""
    header = MODEL_MAGIC + struct.pack(
        "<IBd", model.patch_side, _OP_TAGS[model.op], model.b
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(model.m, dtype="<f8").tobytes())


def load_model(path) -> MetricModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MODEL_MAGIC:
        raise FormatError(f"{path}: not a metric model file (bad magic)")
    if len(blob) < 17:
        raise FormatError(f"{path}: malformed model header")
    patch_side, tag, b = struct.unpack_from("<IBd", blob, 4)
    if tag not in _TAG_OPS:
        raise FormatError(f"{path}: unknown diff-operator tag {tag}")
    if patch_side == 0 or patch_side % 2 == 0:
        raise FormatError(f"{path}: patch side {patch_side} must be odd and positive")
    d = patch_side * patch_side
    expected = 17 + 8 * d * d
    if len(blob) < expected:
        raise FormatError(f"{path}: truncated model payload ({len(blob)} of {expected} bytes)")
    m = np.frombuffer(blob, dtype="<f8", count=d * d, offset=17).reshape(d, d)
    return MetricModel(m=m.copy(), b=b, op=_TAG_OPS[tag], patch_side=patch_side)
