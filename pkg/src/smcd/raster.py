"""Image containers and bit-exact file I/O.

Two on-disk formats are supported:

* SARR: a little-endian binary raster, 4-byte ASCII magic ``SARR``,
  u32 width, u32 height, then ``width*height`` float32 values row-major.
  Round-trips are bit-exact, which keeps score maps and intensity images
  self-contained and testable.
* PGM: binary ``P5``, 8-bit for label maps (0 = unchanged, nonzero =
  changed) or up to 16-bit for intensity import (raw integer values
  taken as-is, then clamped).

Intensity images are clamped to ``INTENSITY_FLOOR`` at load so the
log-ratio operator stays total downstream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError

SARR_MAGIC = b"SARR"

# Smallest admissible intensity value; log-ratio is undefined at zero.
INTENSITY_FLOOR = 1e-6


@dataclass
class Raster:
    """Single-band float32 image, row-major, shape (height, width)."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise DataError(f"raster data must be 2-D, got shape {self.data.shape}")
        if self.data.shape[0] == 0 or self.data.shape[1] == 0:
            raise DataError("raster dimensions must be nonzero")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass
class LabelMap:
    """Binary change map, uint8 values in {0 = unchanged, 1 = changed}."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2:
            raise DataError(f"label data must be 2-D, got shape {arr.shape}")
        if arr.size and not np.isin(arr, (0, 1)).all():
            raise DataError("label values must be exactly 0 or 1")
        self.data = arr.astype(np.uint8)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


def _read_all(path) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def load_raster(path, clamp: bool = True) -> Raster:
    """Load a SARR or PGM file as a float32 raster.

    With ``clamp`` (the default, for intensity inputs) every value is
    raised to at least ``INTENSITY_FLOOR`` and non-finite values are
    rejected.  Pass ``clamp=False`` to read score maps back verbatim.
    """
    blob = _read_all(path)
    if blob[:4] == SARR_MAGIC:
        raster = _parse_sarr(blob, path)
    elif blob[:2] == b"P5":
        raster = Raster(_parse_pgm(blob, path).astype(np.float32))
    else:
        raise FormatError(f"{path}: unrecognized magic bytes (expected SARR or P5)")
    if clamp:
        if not np.isfinite(raster.data).all():
            raise DataError(f"{path}: intensity raster contains NaN or Inf")
        np.maximum(raster.data, np.float32(INTENSITY_FLOOR), out=raster.data)
    return raster


def _parse_sarr(blob: bytes, path) -> Raster:
    if len(blob) < 12:
        raise FormatError(f"{path}: malformed SARR header (file shorter than 12 bytes)")
    width, height = struct.unpack_from("<II", blob, 4)
    if width == 0 or height == 0:
        raise FormatError(f"{path}: zero width or height in SARR header")
    expected = 12 + 4 * width * height
    if len(blob) < expected:
        raise FormatError(
            f"{path}: truncated SARR payload ({len(blob)} bytes, expected {expected})"
        )
    data = np.frombuffer(blob, dtype="<f4", count=width * height, offset=12)
    return Raster(data.reshape(height, width).copy())


def save_raster(r: Raster, path) -> None:
    """Write a raster as SARR, bit-exact."""
    header = SARR_MAGIC + struct.pack("<II", r.width, r.height)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(r.data, dtype="<f4").tobytes())


def _parse_pgm_header(blob: bytes, path) -> tuple[int, int, int, int]:
    """Parse a P5 header, returning (width, height, maxval, payload offset)."""
    if blob[:2] != b"P5":
        raise FormatError(f"{path}: not a binary P5 PGM")
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        if pos >= len(blob):
            raise FormatError(f"{path}: malformed PGM header (ran out of bytes)")
        ch = blob[pos : pos + 1]
        if ch in b" \t\r\n":
            pos += 1
        elif ch == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in b"\r\n":
                pos += 1
        elif ch.isdigit():
            start = pos
            while pos < len(blob) and blob[pos : pos + 1].isdigit():
                pos += 1
            fields.append(int(blob[start:pos]))
        else:
            raise FormatError(f"{path}: malformed PGM header (unexpected byte {ch!r})")
    if pos >= len(blob) or blob[pos : pos + 1] not in b" \t\r\n":
        raise FormatError(f"{path}: malformed PGM header (missing whitespace after maxval)")
    pos += 1
    width, height, maxval = fields
    if width == 0 or height == 0:
        raise FormatError(f"{path}: zero width or height in PGM header")
    if not 0 < maxval < 65536:
        raise FormatError(f"{path}: PGM maxval {maxval} out of range")
    return width, height, maxval, pos


def _parse_pgm(blob: bytes, path) -> np.ndarray:
    width, height, maxval, pos = _parse_pgm_header(blob, path)
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    expected = width * height * dtype.itemsize
    if len(blob) - pos < expected:
        raise FormatError(
            f"{path}: truncated PGM payload ({len(blob) - pos} bytes, expected {expected})"
        )
    data = np.frombuffer(blob, dtype=dtype, count=width * height, offset=pos)
    return data.reshape(height, width)


def load_labels(path) -> LabelMap:
    """Load an 8-bit P5 PGM as a label map: 0 stays 0, anything nonzero is 1."""
    blob = _read_all(path)
    if blob[:2] != b"P5":
        raise FormatError(f"{path}: label maps must be binary P5 PGM")
    width, height, maxval, _ = _parse_pgm_header(blob, path)
    if maxval > 255:
        raise FormatError(f"{path}: label maps must be 8-bit (maxval {maxval} > 255)")
    raw = _parse_pgm(blob, path)
    return LabelMap((raw != 0).astype(np.uint8))


def save_labels(labels: LabelMap, path) -> None:
    """Write a label map as 8-bit P5 PGM with changed pixels at 255."""
    header = f"P5\n{labels.width} {labels.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write((labels.data * np.uint8(255)).tobytes())


def save_pgm_preview(r: Raster, path) -> None:
    """Write an 8-bit PGM preview of a score map, min-max scaled to 0..255."""
    data = r.data.astype(np.float64)
    lo, hi = float(data.min()), float(data.max())
    if hi > lo:
        scaled = np.rint((data - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(data)
    header = f"P5\n{r.width} {r.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(scaled.astype(np.uint8).tobytes())
