"""Seeded bitemporal speckled-scene generator with known ground truth.

Scenes are piecewise-constant reflectivity maps (background 1.0) with a
few random rectangles or ellipses marked as changed.  The first image
is the base reflectivity under multiplicative L-look speckle; the second
multiplies the changed regions by a contrast factor, is bilinearly
resampled by a subpixel shift to emulate residual misregistration, and
receives an independent speckle field.  Speckle is unit-mean gamma noise
with shape equal to the number of looks, the standard multilook
intensity model.

Region layout and noise draw from separate seed substreams, so the
geometry (and hence the ground truth) is stable under noise reseeding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constraints import _reflect_indices
from .errors import DataError
from .raster import INTENSITY_FLOOR, LabelMap, Raster

_PLACEMENT_RETRIES = 100

# Changed-region half-extents as fractions of each image dimension;
# sized so a handful of regions yields enough changed pixels to sample
# training constraints from at desk scale.
_REGION_FRACTION = (0.10, 0.22)


@dataclass
class SceneConfig:
    width: int
    height: int
    looks: int = 2
    shift: tuple[float, float] = (0.0, 0.0)  # (dy, dx) applied to the second image
    n_regions: int = 3
    contrast: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("scene dimensions must be positive")
        if self.looks < 1:
            raise ValueError(f"looks must be >= 1, got {self.looks}")
        if not self.contrast > 0:
            raise ValueError(f"contrast must be positive, got {self.contrast}")
        if abs(self.shift[0]) > 3 or abs(self.shift[1]) > 3:
            raise ValueError(f"shift magnitude must be <= 3 px per axis, got {self.shift}")
        if self.n_regions < 0:
            raise ValueError(f"region count must be nonnegative, got {self.n_regions}")


def speckle_field(shape: tuple[int, int], looks: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-mean multiplicative speckle: gamma(shape=looks, scale=1/looks)."""
    return rng.gamma(shape=float(looks), scale=1.0 / looks, size=shape)


def bilinear_shift(arr: np.ndarray, dy: float, dx: float) -> np.ndarray:
    """Translate image content by (dy, dx) with bilinear resampling.

    Output pixel (r, c) samples the input at (r - dy, c - dx); samples
    falling outside the grid use mirror extension, matching patch
    extraction.
    """
    height, width = arr.shape
    rows = np.arange(height, dtype=np.float64) - dy
    cols = np.arange(width, dtype=np.float64) - dx
    r0 = np.floor(rows).astype(np.int64)
    c0 = np.floor(cols).astype(np.int64)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    r0f = _reflect_indices(r0, height)
    r1f = _reflect_indices(r0 + 1, height)
    c0f = _reflect_indices(c0, width)
    c1f = _reflect_indices(c0 + 1, width)
    return (
        (1 - fr) * (1 - fc) * arr[np.ix_(r0f, c0f)]
        + (1 - fr) * fc * arr[np.ix_(r0f, c1f)]
        + fr * (1 - fc) * arr[np.ix_(r1f, c0f)]
        + fr * fc * arr[np.ix_(r1f, c1f)]
    )


def _place_regions(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    """Random rectangles/ellipses fully inside the image, as a boolean mask."""
    mask = np.zeros((cfg.height, cfg.width), dtype=bool)
    lo, hi = _REGION_FRACTION
    yy = np.arange(cfg.height)[:, None]
    xx = np.arange(cfg.width)[None, :]
    for index in range(cfg.n_regions):
        for attempt in range(_PLACEMENT_RETRIES):
            half_h = max(1, int(round(rng.uniform(lo, hi) * cfg.height)))
            half_w = max(1, int(round(rng.uniform(lo, hi) * cfg.width)))
            if 2 * half_h + 1 > cfg.height or 2 * half_w + 1 > cfg.width:
                continue
            cy = int(rng.integers(half_h, cfg.height - half_h))
            cx = int(rng.integers(half_w, cfg.width - half_w))
            if rng.integers(2) == 0:
                mask[cy - half_h : cy + half_h + 1, cx - half_w : cx + half_w + 1] = True
            else:
                mask |= ((yy - cy) / half_h) ** 2 + ((xx - cx) / half_w) ** 2 <= 1.0
            break
        else:
            raise DataError(
                f"could not place region {index + 1} of {cfg.n_regions} inside "
                f"{cfg.height}x{cfg.width} after {_PLACEMENT_RETRIES} attempts"
            )
    return mask


def gen_scene(cfg: SceneConfig) -> tuple[Raster, Raster, LabelMap]:
    """Generate (first image, second image, ground truth), fully seeded."""
    layout_rng, noise_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2)
    )
    mask = _place_regions(cfg, layout_rng)
    truth = LabelMap(mask.astype(np.uint8))

    reflectivity = np.ones((cfg.height, cfg.width), dtype=np.float64)
    reflectivity2 = reflectivity.copy()
    reflectivity2[mask] = cfg.contrast
    if cfg.shift != (0.0, 0.0):
        reflectivity2 = bilinear_shift(reflectivity2, cfg.shift[0], cfg.shift[1])

    s1 = speckle_field((cfg.height, cfg.width), cfg.looks, noise_rng)
    s2 = speckle_field((cfg.height, cfg.width), cfg.looks, noise_rng)
    i1 = np.maximum(reflectivity * s1, INTENSITY_FLOOR).astype(np.float32)
    i2 = np.maximum(reflectivity2 * s2, INTENSITY_FLOOR).astype(np.float32)
    return Raster(i1), Raster(i2), truth
