"""Integer grayscale rasters and the pixel transforms built on them.

Images are stored row-major as ``(height, width)`` uint16 arrays together with
the number of intensity levels ``K`` (values live in ``[0, K-1]``).  Every
real-valued transform rounds half away from zero and clamps back into range,
so all outputs are valid images of the same bit depth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_LEVELS = 65536

__all__ = [
    "Image2D",
    "Volume3D",
    "AnnotationBox",
    "round_half_away",
    "to_levels",
    "mip",
    "bilinear_resize",
    "rotate",
    "flip_h",
    "flip_v",
    "translate",
    "add_gaussian_noise",
    "rescale_levels",
]


@dataclass(frozen=True, eq=False)
class Image2D:
    pixels: np.ndarray
    levels: int

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"image pixels must be a nonempty 2-D array, got shape {px.shape}")
        if not 2 <= self.levels <= MAX_LEVELS:
            raise ValueError(f"levels must be in [2, {MAX_LEVELS}], got {self.levels}")
        if px.dtype != np.uint16:
            if not np.issubdtype(px.dtype, np.integer):
                raise ValueError(f"image pixels must be integers, got {px.dtype}")
            if px.min() < 0:
                raise ValueError("negative pixel value")
        if px.max() > self.levels - 1:
            raise ValueError(f"pixel value {px.max()} exceeds K-1 = {self.levels - 1}")
        px = np.ascontiguousarray(px, dtype=np.uint16)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def max_value(self) -> int:
        return self.levels - 1

    def __eq__(self, other):
        if not isinstance(other, Image2D):
            return NotImplemented
        return self.levels == other.levels and np.array_equal(self.pixels, other.pixels)

    def __repr__(self):
        return f"Image2D({self.width}x{self.height}, K={self.levels})"


@dataclass(frozen=True)
class AnnotationBox:
    center_x: int
    center_y: int
    width: int
    height: int

    def inside(self, width: int, height: int) -> bool:
        return 0 <= self.center_x < width and 0 <= self.center_y < height

    def to_dict(self) -> dict:
        return {"center_x": self.center_x, "center_y": self.center_y,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationBox":
        return cls(int(d["center_x"]), int(d["center_y"]), int(d["width"]), int(d["height"]))


@dataclass(frozen=True, eq=False)
class Volume3D:
    slices: tuple

    def __post_init__(self):
        slices = tuple(self.slices)
        if not slices:
            raise ValueError("volume needs at least one slice")
        first = slices[0]
        for i, s in enumerate(slices):
            if not isinstance(s, Image2D):
                raise TypeError(f"slice {i} is not an Image2D")
            if s.pixels.shape != first.pixels.shape or s.levels != first.levels:
                raise ValueError(
                    f"slice {i} is {s.width}x{s.height} K={s.levels}, "
                    f"expected {first.width}x{first.height} K={first.levels}")
        object.__setattr__(self, "slices", slices)

    @classmethod
    def from_array(cls, stack: np.ndarray, levels: int) -> "Volume3D":
        return cls(tuple(Image2D(s, levels) for s in stack))

    @property
    def levels(self) -> int:
        return self.slices[0].levels

    def __len__(self):
        return len(self.slices)


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to the nearest integer, ties away from zero."""
    x = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def to_levels(values: np.ndarray, levels: int) -> Image2D:
    """Round and clamp real values into a ``levels``-level image."""
    out = np.clip(round_half_away(values), 0, levels - 1)
    return Image2D(out.astype(np.uint16), levels)


def mip(volume: Volume3D | Sequence[Image2D]) -> Image2D:
    """Per-pixel maximum across the slices of ``volume``."""
    if not isinstance(volume, Volume3D):
        volume = Volume3D(tuple(volume))
    out = volume.slices[0].pixels.copy()
    for s in volume.slices[1:]:
        np.maximum(out, s.pixels, out=out)
    return Image2D(out, volume.levels)


def _bilinear_sample(px: np.ndarray, xs: np.ndarray, ys: np.ndarray, fill: float | None):
    """Sample ``px`` at real coordinates (pixel centres at integers).

    With ``fill=None`` coordinates are clamped to the border; otherwise reads
    outside the grid return ``fill``.
    """
    h, w = px.shape
    src = px.astype(np.float64)
    if fill is None:
        xs = np.clip(xs, 0, w - 1)
        ys = np.clip(ys, 0, h - 1)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0

    def at(yy, xx):
        valid = (xx >= 0) & (xx < w) & (yy >= 0) & (yy < h)
        vals = src[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
        if fill is None:
            return vals
        return np.where(valid, vals, fill)

    top = at(y0, x0) * (1 - fx) + at(y0, x0 + 1) * fx
    bottom = at(y0 + 1, x0) * (1 - fx) + at(y0 + 1, x0 + 1) * fx
    return top * (1 - fy) + bottom * fy


def bilinear_resize(img: Image2D, out_w: int, out_h: int) -> Image2D:
    """Bilinear resampling with half-pixel-centre alignment and edge clamping."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be positive, got {out_w}x{out_h}")
    if (out_w, out_h) == (img.width, img.height):
        return img
    xs = (np.arange(out_w) + 0.5) * (img.width / out_w) - 0.5
    ys = (np.arange(out_h) + 0.5) * (img.height / out_h) - 0.5
    gx, gy = np.meshgrid(xs, ys)
    return to_levels(_bilinear_sample(img.pixels, gx, gy, None), img.levels)


def _snap(a: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    r = np.round(a)
    return np.where(np.abs(a - r) < tol, r, a)


def rotate(img: Image2D, degrees: float) -> Image2D:
    """Rotate counter-clockwise (as displayed, rows pointing down) about the centre.

    Bilinear sampling; source reads outside the image contribute 0.
    """
    if abs(degrees) > 180:
        raise ValueError(f"|degrees| must be <= 180, got {degrees}")
    if degrees == 0:
        return img
    theta = math.radians(degrees)
    c, s = math.cos(theta), math.sin(theta)
    cx = (img.width - 1) / 2.0
    cy = (img.height - 1) / 2.0
    gx, gy = np.meshgrid(np.arange(img.width, dtype=np.float64) - cx,
                         np.arange(img.height, dtype=np.float64) - cy)
    # inverse map: output offset -> source offset
    xs = _snap(c * gx - s * gy + cx)
    ys = _snap(s * gx + c * gy + cy)
    return to_levels(_bilinear_sample(img.pixels, xs, ys, 0.0), img.levels)


def flip_h(img: Image2D) -> Image2D:
    return Image2D(img.pixels[:, ::-1], img.levels)


def flip_v(img: Image2D) -> Image2D:
    return Image2D(img.pixels[::-1, :], img.levels)


def translate(img: Image2D, dx: int, dy: int) -> Image2D:
    """Shift content right by ``dx`` and down by ``dy``; vacated pixels become 0."""
    dx, dy = int(dx), int(dy)
    h, w = img.pixels.shape
    out = np.zeros_like(img.pixels)
    if abs(dx) < w and abs(dy) < h:
        src = img.pixels[max(0, -dy):h - max(0, dy), max(0, -dx):w - max(0, dx)]
        out[max(0, dy):max(0, dy) + src.shape[0], max(0, dx):max(0, dx) + src.shape[1]] = src
    return Image2D(out, img.levels)


def add_gaussian_noise(img: Image2D, sigma: float, rng: np.random.Generator) -> Image2D:
    """Add i.i.d. N(0, sigma^2) noise on the integer intensity scale."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return img
    noise = rng.standard_normal(img.pixels.shape) * sigma
    return to_levels(img.pixels + noise, img.levels)


def rescale_levels(img: Image2D, levels: int) -> Image2D:
    """Linearly map ``[0, K-1]`` onto ``[0, levels-1]``."""
    if levels == img.levels:
        return img
    scale = (levels - 1) / (img.levels - 1)
    return to_levels(img.pixels * scale, levels)
