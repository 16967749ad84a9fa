"""Score-map sweep, change-map thresholding, baseline, and evaluation.

``difference_image`` applies a trained metric at every pixel of an image
pair; ``change_map`` binarizes the resulting score map either by sign
(the decision rule the metric was trained for) or by Otsu's threshold
(for unbiased maps such as the log-ratio baseline).  ``evaluate``
reduces a predicted map against ground truth to confusion counts,
class-normalized alarm rates, and the kappa coefficient.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .diffops import OP_LR, MetricModel
from .errors import DataError
from .raster import INTENSITY_FLOOR, LabelMap, Raster

# Cap on the per-chunk float64 scratch while sweeping (elements, ~64 MB).
_CHUNK_BUDGET = 8_000_000


def _padded_windows(img: Raster, side: int) -> np.ndarray:
    """(H, W, side, side) view of mirror-padded patches, one per pixel."""
    half = side // 2
    padded = np.pad(img.data, half, mode="reflect")
    return sliding_window_view(padded, (side, side))


def difference_image(i1: Raster, i2: Raster, model: MetricModel) -> Raster:
    """Score every pixel with the learned metric, mirror-padded at borders.

    Equivalent to score(extract_patch(i1, p), extract_patch(i2, p), model)
    at every pixel p, but vectorized in row chunks.
    """
    if i1.shape != i2.shape:
        raise DataError(f"image dimensions differ: {i1.shape} vs {i2.shape}")
    side = model.patch_side
    d = model.d
    if model.op == OP_LR and (
        (i1.data < INTENSITY_FLOOR).any() or (i2.data < INTENSITY_FLOOR).any()
    ):
        raise DataError("log-ratio metric requires intensities at or above the floor")

    height, width = i1.shape
    win1 = _padded_windows(i1, side)
    win2 = _padded_windows(i2, side)
    out = np.empty((height, width), dtype=np.float32)
    rows_per_chunk = max(1, _CHUNK_BUDGET // (width * d))
    for r0 in range(0, height, rows_per_chunk):
        r1 = min(r0 + rows_per_chunk, height)
        p1 = win1[r0:r1].reshape(-1, d).astype(np.float64)
        p2 = win2[r0:r1].reshape(-1, d).astype(np.float64)
        if model.op == OP_LR:
            v = np.log(p1) - np.log(p2)
        else:
            v = p1 - p2
        scores = ((v @ model.m) * v).sum(axis=1) + model.b
        out[r0:r1] = scores.reshape(r1 - r0, width).astype(np.float32)
    return Raster(out)


def change_map(scores: Raster, mode: str = "sign") -> LabelMap:
    """Binarize a score map.

    ``sign`` marks changed where score >= 0 (the trained decision rule);
    ``otsu`` thresholds a 256-bin histogram of the min-max scaled scores
    at the split maximizing between-class variance.
    """
    data = scores.data.astype(np.float64)
    if not np.isfinite(data).all():
        raise DataError("score map contains non-finite values")
    if mode == "sign":
        return LabelMap((data >= 0.0).astype(np.uint8))
    if mode == "otsu":
        lo, hi = float(data.min()), float(data.max())
        if hi == lo:
            raise DataError("constant score map: no Otsu threshold exists")
        bins = np.rint((data - lo) / (hi - lo) * 255.0).astype(np.int64)
        split = otsu_split(np.bincount(bins.ravel(), minlength=256))
        return LabelMap((bins > split).astype(np.uint8))
    raise ValueError(f"unknown change-map mode {mode!r}")


def otsu_split(counts: np.ndarray) -> int:
    """Index t maximizing between-class variance for the split <=t | >t.

    Ties resolve to the lowest index.
    """
    counts = np.asarray(counts, dtype=np.float64)
    levels = np.arange(counts.size, dtype=np.float64)
    w0 = np.cumsum(counts)
    m0 = np.cumsum(counts * levels)
    total, msum = w0[-1], m0[-1]
    w0, m0 = w0[:-1], m0[:-1]
    w1 = total - w0
    valid = (w0 > 0) & (w1 > 0)
    sigma_b = np.zeros(counts.size - 1)
    mu0 = np.divide(m0, w0, out=np.zeros_like(m0), where=valid)
    mu1 = np.divide(msum - m0, w1, out=np.zeros_like(m0), where=valid)
    sigma_b[valid] = (w0 * w1)[valid] * (mu0 - mu1)[valid] ** 2
    if not valid.any():
        raise DataError("degenerate histogram: all mass in one bin")
    return int(np.argmax(sigma_b))


def baseline_lr_map(i1: Raster, i2: Raster, window: int = 1) -> Raster:
    """Windowed-mean |log-ratio| map; window 1 is the pure pixelwise operator."""
    if i1.shape != i2.shape:
        raise DataError(f"image dimensions differ: {i1.shape} vs {i2.shape}")
    if window % 2 == 0 or window < 1:
        raise ValueError(f"window must be odd and positive, got {window}")
    if (i1.data < INTENSITY_FLOOR).any() or (i2.data < INTENSITY_FLOOR).any():
        raise DataError("log-ratio baseline requires intensities at or above the floor")
    logs = np.log(i1.data.astype(np.float64)) - np.log(i2.data.astype(np.float64))
    if window > 1:
        half = window // 2
        padded = np.pad(logs, half, mode="reflect")
        logs = sliding_window_view(padded, (window, window)).mean(axis=(2, 3))
    return Raster(np.abs(logs).astype(np.float32))


@dataclass
class EvalReport:
    """Confusion counts plus the class-normalized rates derived from them."""

    tp: int
    fp: int
    fn: int
    tn: int
    p_fa: float
    p_ma: float
    kappa: float
    degenerate: bool = False

    @property
    def fa(self) -> int:
        return self.fp

    @property
    def ma(self) -> int:
        return self.fn

    _FIELDS = ("tp", "fp", "fn", "tn", "fa", "ma", "p_fa", "p_ma", "kappa")

    def lines(self) -> list[str]:
        """key=value lines in fixed field order."""
        out = []
        for name in self._FIELDS:
            value = getattr(self, name)
            out.append(f"{name}={value:.6f}" if isinstance(value, float) else f"{name}={value}")
        return out

    def oneline(self) -> str:
        """The same fields on a single machine-readable line."""
        return " ".join(self.lines())


def evaluate(pred: LabelMap, truth: LabelMap, pma_denominator: str = "changed") -> EvalReport:
    """Score a predicted change map against ground truth.

    False alarms are normalized by the unchanged-pixel count.  Missed
    alarms are normalized by the changed count by default; passing
    ``pma_denominator="unchanged"`` divides them by the unchanged count
    instead (a reading some evaluation protocols use).
    """
    if pred.shape != truth.shape:
        raise DataError(f"dimension mismatch: pred {pred.shape} vs truth {truth.shape}")
    if pma_denominator not in ("changed", "unchanged"):
        raise ValueError(f"unknown pMA denominator {pma_denominator!r}")
    p = pred.data != 0
    t = truth.data != 0
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = int(np.count_nonzero(~p & ~t))
    n = pred.data.size

    n_unchanged = tn + fp
    n_changed = tp + fn
    p_fa = fp / n_unchanged if n_unchanged else 0.0
    ma_den = n_changed if pma_denominator == "changed" else n_unchanged
    p_ma = fn / ma_den if ma_den else 0.0

    p_o = (tp + tn) / n
    p_e = ((tp + fp) * (tp + fn) + (tn + fn) * (tn + fp)) / (n * n)
    degenerate = p_e == 1.0
    if degenerate:
        kappa = 1.0 if p_o == 1.0 else 0.0
        print("warning: degenerate kappa (expected agreement is 1)", file=sys.stderr)
    else:
        kappa = (p_o - p_e) / (1.0 - p_e)
    return EvalReport(
        tp=tp, fp=fp, fn=fn, tn=tn, p_fa=p_fa, p_ma=p_ma, kappa=kappa, degenerate=degenerate
    )
