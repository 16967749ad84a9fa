"""Patch extraction and constraint-pair sampling for metric training.

Training pairs are drawn from two co-registered images plus a ground
truth map: a site labeled changed contributes a positive pair (y = +1),
an unchanged site a negative pair (y = -1).  The second patch of each
pair is taken at a jittered location within Chebyshev radius ``r`` of
the first, restricted to sites carrying the same label, so the learned
metric sees the residual registration error without the jitter flipping
pair semantics.

Borders are handled by mirror padding (reflection without repeating the
edge pixel), so every pixel is a valid patch center.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .diffops import _OP_TAGS, _TAG_OPS, diff_fn
from .errors import DataError, FormatError
from .raster import LabelMap, Raster

CONSTRAINTS_MAGIC = b"SMCS"

DEFAULT_JITTER = 2


def _reflect_indices(idx: np.ndarray, n: int) -> np.ndarray:
    """Fold arbitrary integer indices into [0, n) by mirror reflection."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


def extract_patch(img: Raster, center: tuple[int, int], side: int) -> np.ndarray:
    """Extract the side x side window around ``center`` as a row-major vector.

    ``side`` must be odd; the center must lie inside the image.  Windows
    reaching past the border are mirror-padded.
    """
    if side % 2 == 0 or side < 1:
        raise ValueError(f"patch side must be odd and positive, got {side}")
    row, col = center
    if not (0 <= row < img.height and 0 <= col < img.width):
        raise ValueError(f"patch center {center} outside {img.height}x{img.width} image")
    half = side // 2
    rows = _reflect_indices(np.arange(row - half, row + half + 1), img.height)
    cols = _reflect_indices(np.arange(col - half, col + half + 1), img.width)
    return img.data[np.ix_(rows, cols)].ravel()


@dataclass
class ConstraintPair:
    """One labeled training pair: difference vector, label, and both centers."""

    v: np.ndarray
    y: int
    center1: tuple[int, int]
    center2: tuple[int, int]


@dataclass
class ConstraintSet:
    """Labeled difference vectors sharing one length and diff operator."""

    pairs: list[ConstraintPair] = field(default_factory=list)
    d: int = 0
    op: str = "sub"

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def vs(self) -> np.ndarray:
        """(n, d) float64 array of difference vectors, in pair order."""
        return np.stack([p.v for p in self.pairs]).astype(np.float64)

    @property
    def ys(self) -> np.ndarray:
        """(n,) float64 array of +1/-1 labels, in pair order."""
        return np.array([p.y for p in self.pairs], dtype=np.float64)


def sample_constraints(
    i1: Raster,
    i2: Raster,
    labels: LabelMap,
    op: str,
    side: int,
    n: int,
    r: int = DEFAULT_JITTER,
    seed: int = 0,
) -> ConstraintSet:
    """Draw a balanced, seeded set of jittered constraint pairs.

    Exactly n/2 positive pairs come from changed sites and n/2 negative
    pairs from unchanged sites.  Each pair's first center is sampled
    without replacement within its class; the second center is a uniform
    draw over the in-bounds offsets in [-r, r]^2 whose label matches the
    first center (offset (0, 0) always qualifies).
    """
    if i1.shape != i2.shape or i1.shape != labels.shape:
        raise DataError(
            f"dimension mismatch: i1 {i1.shape}, i2 {i2.shape}, labels {labels.shape}"
        )
    if n < 2 or n % 2 != 0:
        raise ValueError(f"number of pairs must be even and positive, got {n}")
    if side % 2 == 0 or side < 1:
        raise ValueError(f"patch side must be odd and positive, got {side}")
    if r < 0:
        raise ValueError(f"jitter radius must be nonnegative, got {r}")

    rng = np.random.default_rng(seed)
    diff = diff_fn(op)
    half_n = n // 2
    offsets = np.array(
        [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)], dtype=np.int64
    )

    pairs: list[ConstraintPair] = []
    for label_value, y in ((1, +1), (0, -1)):
        sites = np.argwhere(labels.data == label_value)
        if len(sites) < half_n:
            raise DataError(
                f"insufficient {'changed' if label_value else 'unchanged'} pixels: "
                f"have {len(sites)}, need {half_n}"
            )
        chosen = sites[rng.choice(len(sites), size=half_n, replace=False)]
        for row, col in chosen:
            cand = offsets + (row, col)
            ok = (
                (cand[:, 0] >= 0)
                & (cand[:, 0] < labels.height)
                & (cand[:, 1] >= 0)
                & (cand[:, 1] < labels.width)
            )
            cand = cand[ok]
            cand = cand[labels.data[cand[:, 0], cand[:, 1]] == label_value]
            r2, c2 = cand[rng.integers(len(cand))]
            center1 = (int(row), int(col))
            center2 = (int(r2), int(c2))
            v = diff(extract_patch(i1, center1, side), extract_patch(i2, center2, side))
            pairs.append(ConstraintPair(v=v, y=y, center1=center1, center2=center2))

    return ConstraintSet(pairs=pairs, d=side * side, op=op)


def save_constraints(cs: ConstraintSet, path) -> None:
    """Dump a constraint set for debugging and oracle replay."""
    with open(path, "wb") as fh:
        fh.write(CONSTRAINTS_MAGIC)
        fh.write(struct.pack("<IIB", len(cs.pairs), cs.d, _OP_TAGS[cs.op]))
        for p in cs.pairs:
            fh.write(
                struct.pack(
                    "<bIIII", p.y, p.center1[0], p.center1[1], p.center2[0], p.center2[1]
                )
            )
            fh.write(np.ascontiguousarray(p.v, dtype="<f8").tobytes())


def load_constraints(path) -> ConstraintSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CONSTRAINTS_MAGIC:
        raise FormatError(f"{path}: not a constraint dump (bad magic)")
    if len(blob) < 13:
        raise FormatError(f"{path}: malformed constraint-dump header")
    n, d, tag = struct.unpack_from("<IIB", blob, 4)
    if tag not in _TAG_OPS:
        raise FormatError(f"{path}: unknown diff-operator tag {tag}")
    record = 17 + 8 * d
    expected = 13 + n * record
    if len(blob) < expected:
        raise FormatError(f"{path}: truncated constraint dump ({len(blob)} of {expected} bytes)")
    pairs = []
    pos = 13
    for _ in range(n):
        y, r1, c1, r2, c2 = struct.unpack_from("<bIIII", blob, pos)
        v = np.frombuffer(blob, dtype="<f8", count=d, offset=pos + 17).copy()
        pairs.append(ConstraintPair(v=v, y=int(y), center1=(r1, c1), center2=(r2, c2)))
        pos += record
    return ConstraintSet(pairs=pairs, d=d, op=_TAG_OPS[tag])
