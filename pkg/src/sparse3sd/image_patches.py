"""Grayscale image I/O and overlapping patch extraction / aggregation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


class ImageFormatError(ValueError):
    """Raised for unreadable or unsupported image files."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Image:
    """A grayscale image stored as a (height, width) float64 array."""

    pixels: np.ndarray
    max_value: float = 255.0

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.float64)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"image must be a non-empty 2-D array, got shape {px.shape}")
        if not np.all(np.isfinite(px)):
            raise ValueError("image contains non-finite intensities")
        if not self.max_value > 0:
            raise ValueError("max_value must be positive")
        object.__setattr__(self, "pixels", _frozen(px.copy()))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape

    def with_pixels(self, pixels: np.ndarray) -> "Image":
        return Image(pixels, self.max_value)

    def quantized(self) -> "Image":
        """Return the 8-bit clamped / half-up rounded copy that a file write would store."""
        return Image(_quantize(self.pixels, self.max_value).astype(np.float64), self.max_value)


def _quantize(pixels: np.ndarray, max_value: float = 255.0) -> np.ndarray:
    # round half-up, then clamp
    q = np.floor(np.asarray(pixels, dtype=np.float64) + 0.5)
    return np.clip(q, 0, max_value).astype(np.uint8)


def _infer_format(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
    else:
        ext = os.path.splitext(str(path))[1].lower()
        fmt = {".pgm": "pgm", ".pnm": "pgm", ".png": "png"}.get(ext)
    if fmt not in ("pgm", "png"):
        raise ImageFormatError(f"unsupported image format for {path!r}")
    return fmt


def _read_pgm(data: bytes) -> np.ndarray:
    pos = 0
    fields = []

    def next_token():
        nonlocal pos
        while pos < len(data):
            c = data[pos : pos + 1]
            if c == b"#":
                end = data.find(b"\n", pos)
                pos = len(data) if end < 0 else end + 1
            elif c.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        return data[start:pos]

    magic = next_token()
    if magic != b"P5":
        raise ImageFormatError(f"not a binary P5 PGM file (magic {magic[:2]!r})")
    for _ in range(3):
        tok = next_token()
        if not tok.isdigit():
            raise ImageFormatError("malformed PGM header")
        fields.append(int(tok))
    width, height, maxval = fields
    if maxval > 255:
        raise ImageFormatError("unsupported bit depth: only 8-bit PGM (maxval 255) is supported")
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval}: only 255 is supported")
    if width <= 0 or height <= 0:
        raise ImageFormatError("PGM has zero size")
    # exactly one whitespace byte separates the header from the raster
    pos += 1
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise ImageFormatError("truncated PGM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width)


def _read_png(path) -> np.ndarray:
    from PIL import Image as PILImage

    try:
        with PILImage.open(path) as im:
            if im.format != "PNG":
                raise ImageFormatError(f"{path!r} is not a PNG file")
            if im.mode in ("I", "I;16", "I;16B", "I;16L", "1"):
                raise ImageFormatError(f"unsupported bit depth (PNG mode {im.mode})")
            if im.mode != "L":
                raise ImageFormatError(f"unsupported color format (PNG mode {im.mode})")
            return np.asarray(im, dtype=np.uint8).copy()
    except ImageFormatError:
        raise
    except Exception as exc:
        raise ImageFormatError(f"cannot read PNG {path!r}: {exc}") from exc


def load_image(path, format: str | None = None) -> Image:
    """Load an 8-bit grayscale PGM (P5) or PNG file.

    Args:
        path: File to read.
        format: ``"pgm"`` or ``"png"``; inferred from the extension when omitted.

    Raises:
        ImageFormatError: unreadable file, wrong bit depth or non-gray color format.
    """
    fmt = _infer_format(path, format)
    if fmt == "pgm":
        try:
            with open(path, "rb") as fh:
                data = fh.read()
        except OSError as exc:
            raise ImageFormatError(f"cannot read {path!r}: {exc}") from exc
        raster = _read_pgm(data)
    else:
        raster = _read_png(path)
    return Image(raster.astype(np.float64), 255.0)


def save_image(img: Image, path, format: str | None = None) -> None:
    """Write ``img`` as 8-bit grayscale; intensities are rounded half-up and clamped."""
    fmt = _infer_format(path, format)
    raster = _quantize(img.pixels, 255.0)
    try:
        if fmt == "pgm":
            with open(path, "wb") as fh:
                fh.write(b"P5\n%d %d\n255\n" % (img.width, img.height))
                fh.write(raster.tobytes())
        else:
            from PIL import Image as PILImage

            PILImage.fromarray(raster, mode="L").save(path, format="PNG")
    except OSError as exc:
        raise OSError(f"cannot write image to {path!r}: {exc}") from exc


def _origins(length: int, patch_side: int, stride: int) -> np.ndarray:
    last = length - patch_side
    o = list(range(0, last + 1, stride))
    if o[-1] != last:
        o.append(last)
    return np.asarray(o, dtype=np.intp)


@dataclass(frozen=True)
class PatchGrid:
    """Top-left patch origins; patches are ``patch_side`` x ``patch_side``."""

    patch_side: int
    stride: int
    origin_rows: np.ndarray
    origin_cols: np.ndarray
    image_shape: tuple[int, int]

    @classmethod
    def for_shape(cls, shape: Sequence[int], patch_side: int, stride: int = 1) -> "PatchGrid":
        h, w = int(shape[0]), int(shape[1])
        if patch_side < 1:
            raise ValueError("patch_side must be >= 1")
        if stride < 1:
            raise ValueError("stride must be >= 1")
        if stride > patch_side:
            # pixels between patches would get no estimate
            raise ValueError(f"stride {stride} exceeds patch_side {patch_side}; image would not be covered")
        if patch_side > min(h, w):
            raise ValueError(f"patch of side {patch_side} is larger than the {h}x{w} image")
        return cls(
            patch_side,
            stride,
            _frozen(_origins(h, patch_side, stride)),
            _frozen(_origins(w, patch_side, stride)),
            (h, w),
        )

    @property
    def signal_dim(self) -> int:
        return self.patch_side * self.patch_side

    @property
    def patch_count(self) -> int:
        return len(self.origin_rows) * len(self.origin_cols)


@dataclass(frozen=True)
class PatchMatrix:
    """Column-stacked patches X (N x M) with their grid and removed means."""

    data: np.ndarray
    grid: PatchGrid
    dc_offsets: np.ndarray = field(default=None)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.shape != (self.grid.signal_dim, self.grid.patch_count):
            raise ValueError(
                f"patch data shape {data.shape} does not match grid "
                f"({self.grid.signal_dim}, {self.grid.patch_count})"
            )
        dc = np.zeros(data.shape[1]) if self.dc_offsets is None else np.asarray(self.dc_offsets, np.float64)
        if dc.shape != (data.shape[1],):
            raise ValueError("dc_offsets must have one entry per patch")
        object.__setattr__(self, "data", _frozen(data))
        object.__setattr__(self, "dc_offsets", _frozen(dc))

    @property
    def signal_dim(self) -> int:
        return self.data.shape[0]

    @property
    def patch_count(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "PatchMatrix":
        return PatchMatrix(data, self.grid, self.dc_offsets)


def extract_patches(img: Image, patch_side: int = 8, stride: int = 1, remove_dc: bool = True) -> PatchMatrix:
    """Collect every grid patch of ``img`` as a column, in row-major origin order.

    Patch pixels are vectorized row-major. With ``remove_dc`` each column's mean
    is subtracted and kept in ``dc_offsets``.
    """
    grid = PatchGrid.for_shape(img.shape, patch_side, stride)
    n = patch_side
    windows = np.lib.stride_tricks.sliding_window_view(img.pixels, (n, n))
    sel = windows[np.ix_(grid.origin_rows, grid.origin_cols)]  # (R, C, n, n)
    X = sel.reshape(-1, n * n).T.copy()
    if remove_dc:
        dc = X.mean(axis=0)
        X -= dc
    else:
        dc = np.zeros(X.shape[1])
    return PatchMatrix(X, grid, dc)


def aggregate_patches(recon, grid: PatchGrid, dc_offsets=None, out_shape=None, max_value: float = 255.0) -> Image:
    """Average overlapping patch estimates back into an image.

    Every pixel receives the mean of all patch values covering it. Offsets are
    visited in descending order so that each pixel accumulates its contributions
    in ascending patch-index order.
    """
    recon = np.asarray(recon, dtype=np.float64)
    if out_shape is None:
        out_shape = grid.image_shape
    out_shape = (int(out_shape[0]), int(out_shape[1]))
    if out_shape != tuple(grid.image_shape):
        raise ValueError(f"output shape {out_shape} does not match grid shape {grid.image_shape}")
    if recon.shape != (grid.signal_dim, grid.patch_count):
        raise ValueError(f"reconstruction shape {recon.shape} does not match grid")
    n = grid.patch_side
    nr, nc = len(grid.origin_rows), len(grid.origin_cols)
    vals = recon
    if dc_offsets is not None:
        dc = np.asarray(dc_offsets, dtype=np.float64)
        if dc.shape != (grid.patch_count,):
            raise ValueError("dc_offsets length does not match patch count")
        vals = recon + dc
    vals = vals.reshape(n, n, nr, nc)
    acc = np.zeros(out_shape)
    cnt = np.zeros(out_shape)
    for di in range(n - 1, -1, -1):
        rows = grid.origin_rows + di
        for dj in range(n - 1, -1, -1):
            idx = np.ix_(rows, grid.origin_cols + dj)
            acc[idx] += vals[di, dj]
            cnt[idx] += 1.0
    return Image(acc / cnt, max_value)
