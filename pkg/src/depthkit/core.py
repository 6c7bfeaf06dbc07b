"""Image and depth-map primitives shared by every stage of the pipeline.

Conventions: arrays are row-major (H, W[, C]) numpy float64 on evaluation
paths; RGB values live in [0, 1] with no further normalization; depth is
metric (meters) with a boolean validity mask where False marks missing
sensor data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "RgbImage",
    "DepthMap",
    "TargetMap",
    "CropRect",
    "clip_depth",
    "reciprocal_transform",
    "inverse_reciprocal_transform",
    "resize_bilinear",
    "resize_nearest",
    "horizontal_flip",
    "center_crop",
    "resize_array_bilinear",
    "resize_array_nearest",
]


@dataclass(frozen=True)
class RgbImage:
    """Three-channel image, values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {v.shape}")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("RGB values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class DepthMap:
    """Metric depth (meters) with per-pixel validity.

    Pixels recorded as 0 in source data are missing; when no mask is given
    one is derived as ``values > 0``. Valid pixels must be strictly
    positive; invalid pixels may hold any placeholder (conventionally 0).
    """

    values: np.ndarray
    valid_mask: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"expected (H, W) array, got shape {v.shape}")
        if self.valid_mask is None:
            m = v > 0.0
        else:
            m = np.asarray(self.valid_mask, dtype=bool)
            if m.shape != v.shape:
                raise ValueError("valid_mask shape must match values")
        if np.any(v[m] <= 0.0):
            raise ValueError("valid depth values must be strictly positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid_mask", m)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class TargetMap:
    """Reciprocal-space regression target, max_depth_m / depth per pixel.

    For a scene with depth range [d_min, d_max] and constant m = d_max the
    values lie in [m / d_max, m / d_min] (e.g. [1, 25] for the 0.4-10 m
    indoor profile).
    """

    values: np.ndarray
    max_depth_m: float
    valid_mask: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"expected (H, W) array, got shape {v.shape}")
        if self.max_depth_m <= 0.0:
            raise ValueError("max_depth_m must be positive")
        if self.valid_mask is None:
            m = np.ones(v.shape, dtype=bool)
        else:
            m = np.asarray(self.valid_mask, dtype=bool)
            if m.shape != v.shape:
                raise ValueError("valid_mask shape must match values")
        if np.any(v[m] <= 0.0):
            raise ValueError("valid target values must be strictly positive")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "valid_mask", m)
        object.__setattr__(self, "max_depth_m", float(self.max_depth_m))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CropRect:
    """Axis-aligned crop rectangle in pixel coordinates."""

    top: int
    left: int
    height: int
    width: int

    def __post_init__(self):
        if self.top < 0 or self.left < 0 or self.height < 1 or self.width < 1:
            raise ValueError(f"invalid crop rectangle {self}")

    def check_inside(self, img_height: int, img_width: int) -> None:
        if self.top + self.height > img_height or self.left + self.width > img_width:
            raise ValueError(
                f"crop {self} exceeds image bounds {img_height}x{img_width}"
            )


def clip_depth(d: DepthMap, d_min: float, d_max: float) -> DepthMap:
    """Clamp valid depth values into [d_min, d_max]; invalid pixels untouched."""
    if d_min <= 0.0:
        raise ValueError("d_min must be positive")
    if d_max <= d_min:
        raise ValueError("d_max must exceed d_min")
    v = d.values.copy()
    m = d.valid_mask
    v[m] = np.clip(v[m], d_min, d_max)
    return DepthMap(v, m.copy())


def reciprocal_transform(d: DepthMap, m: float) -> TargetMap:
    """Map depth to the regression target m / depth (valid pixels only)."""
    if m <= 0.0:
        raise ValueError("maximum depth m must be positive")
    if np.any(d.values[d.valid_mask] <= 0.0):
        raise ValueError("depth must be strictly positive on valid pixels")
    v = np.zeros_like(d.values)
    v[d.valid_mask] = m / d.values[d.valid_mask]
    # Placeholder 1.0 on invalid pixels keeps the positive-value invariant.
    v[~d.valid_mask] = 1.0
    return TargetMap(v, m, d.valid_mask.copy())


def inverse_reciprocal_transform(t: TargetMap) -> DepthMap:
    """Exact inverse of reciprocal_transform: depth = m / target."""
    if np.any(t.values[t.valid_mask] <= 0.0):
        raise ValueError("target must be strictly positive on valid pixels")
    v = np.zeros_like(t.values)
    v[t.valid_mask] = t.max_depth_m / t.values[t.valid_mask]
    return DepthMap(v, t.valid_mask.copy())


def _sample_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Half-pixel-center source coordinates: x_src = (i + 0.5) * scale - 0.5."""
    scale = n_in / n_out
    x = (np.arange(n_out, dtype=np.float64) + 0.5) * scale - 0.5
    x0 = np.floor(x).astype(np.int64)
    frac = x - x0
    return x0, frac, x


def resize_array_bilinear(a: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resize of an (H, W) or (H, W, C) array.

    Uses the half-pixel-center convention with edge clamping, so constants
    are preserved exactly and output values never overshoot the input range.
    """
    if new_h < 1 or new_w < 1:
        raise ValueError("output dimensions must be >= 1")
    a = np.asarray(a, dtype=np.float64)
    h, w = a.shape[:2]
    y0, fy, _ = _sample_coords(h, new_h)
    x0, fx, _ = _sample_coords(w, new_w)
    y0c = np.clip(y0, 0, h - 1)
    y1c = np.clip(y0 + 1, 0, h - 1)
    x0c = np.clip(x0, 0, w - 1)
    x1c = np.clip(x0 + 1, 0, w - 1)
    # lerp form a + (b - a) * t keeps constants bit-exact
    fy_b = fy.reshape(-1, 1) if a.ndim == 2 else fy.reshape(-1, 1, 1)
    fx_b = fx.reshape(1, -1) if a.ndim == 2 else fx.reshape(1, -1, 1)
    tl = a[np.ix_(y0c, x0c)]
    tr = a[np.ix_(y0c, x1c)]
    bl = a[np.ix_(y1c, x0c)]
    br = a[np.ix_(y1c, x1c)]
    top = tl + (tr - tl) * fx_b
    bot = bl + (br - bl) * fx_b
    return top + (bot - top) * fy_b


def resize_array_nearest(a: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Nearest-neighbor resize under the same half-pixel-center mapping."""
    if new_h < 1 or new_w < 1:
        raise ValueError("output dimensions must be >= 1")
    a = np.asarray(a)
    h, w = a.shape[:2]
    _, _, ys = _sample_coords(h, new_h)
    _, _, xs = _sample_coords(w, new_w)
    yi = np.clip(np.floor(ys + 0.5).astype(np.int64), 0, h - 1)
    xi = np.clip(np.floor(xs + 0.5).astype(np.int64), 0, w - 1)
    return a[np.ix_(yi, xi)].copy()


def resize_bilinear(x, new_h: int, new_w: int):
    """Resize an image kind to (new_h, new_w).

    RgbImage values are interpolated per channel. DepthMap/TargetMap values
    are interpolated bilinearly while the validity mask is resized by
    nearest neighbor.
    """
    if isinstance(x, RgbImage):
        return RgbImage(resize_array_bilinear(x.values, new_h, new_w))
    if isinstance(x, DepthMap):
        return DepthMap(
            resize_array_bilinear(x.values, new_h, new_w),
            resize_array_nearest(x.valid_mask, new_h, new_w),
        )
    if isinstance(x, TargetMap):
        return TargetMap(
            resize_array_bilinear(x.values, new_h, new_w),
            x.max_depth_m,
            resize_array_nearest(x.valid_mask, new_h, new_w),
        )
    raise TypeError(f"unsupported image kind {type(x).__name__}")


def resize_nearest(x, new_h: int, new_w: int):
    """Nearest-neighbor resize for all image kinds (used for sparse depth)."""
    if isinstance(x, RgbImage):
        return RgbImage(resize_array_nearest(x.values, new_h, new_w))
    if isinstance(x, DepthMap):
        return DepthMap(
            resize_array_nearest(x.values, new_h, new_w),
            resize_array_nearest(x.valid_mask, new_h, new_w),
        )
    if isinstance(x, TargetMap):
        return TargetMap(
            resize_array_nearest(x.values, new_h, new_w),
            x.max_depth_m,
            resize_array_nearest(x.valid_mask, new_h, new_w),
        )
    raise TypeError(f"unsupported image kind {type(x).__name__}")


def horizontal_flip(x):
    """Reverse column order. Applying twice restores the input bit-exactly."""
    if isinstance(x, RgbImage):
        return RgbImage(x.values[:, ::-1].copy())
    if isinstance(x, DepthMap):
        return DepthMap(x.values[:, ::-1].copy(), x.valid_mask[:, ::-1].copy())
    if isinstance(x, TargetMap):
        return TargetMap(
            x.values[:, ::-1].copy(), x.max_depth_m, x.valid_mask[:, ::-1].copy()
        )
    raise TypeError(f"unsupported image kind {type(x).__name__}")


def center_crop(x, rect: CropRect):
    """Extract the exact sub-rectangle; rejects out-of-bounds rectangles."""
    sl = (
        slice(rect.top, rect.top + rect.height),
        slice(rect.left, rect.left + rect.width),
    )
    if isinstance(x, RgbImage):
        rect.check_inside(x.height, x.width)
        return RgbImage(x.values[sl].copy())
    if isinstance(x, DepthMap):
        rect.check_inside(x.height, x.width)
        return DepthMap(x.values[sl].copy(), x.valid_mask[sl].copy())
    if isinstance(x, TargetMap):
        rect.check_inside(x.height, x.width)
        return TargetMap(x.values[sl].copy(), x.max_depth_m, x.valid_mask[sl].copy())
    raise TypeError(f"unsupported image kind {type(x).__name__}")
