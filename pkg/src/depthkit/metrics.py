"""Depth-map quality metrics.

Quantitative errors over valid pixels in metric space (meters):

    rel     : mean |y - yhat| / y
    rms     : sqrt(mean (y - yhat)^2)
    log10   : mean |log10 y - log10 yhat|
    sq_rel  : mean (y - yhat)^2 / y
    delta_i : fraction of pixels with max(y/yhat, yhat/y) < 1.25^i

Qualitative measures comparing depth maps as images:

    mssim             : mean SSIM of grayscale renderings (shared gt range)
    edge_f1           : F1 of Sobel-magnitude edge maps thresholded at 0.5
    mean_normal_error : mean (1 - cosine) between screen-space normal maps

Everything here is pure float64 numpy; per-image values are aggregated
with compensated summation so reduction order cannot perturb reports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .core import CropRect, DepthMap, center_crop, resize_array_bilinear
from .loss import SsimParams

__all__ = [
    "MetricReport",
    "NormalMap",
    "rel",
    "rms",
    "log10_error",
    "delta_accuracy",
    "sq_rel",
    "median_scale",
    "render_grayscale",
    "ssim_index",
    "mssim",
    "sobel_magnitude",
    "edge_f1",
    "normals_from_depth",
    "mean_normal_error",
    "compute_image_metrics",
    "aggregate_image_metrics",
    "evaluate_set",
    "DELTA_THRESHOLD",
    "EDGE_THRESHOLD",
    "PREDICTION_PNG_SCALE",
]

DELTA_THRESHOLD = 1.25
EDGE_THRESHOLD = 0.5
# prediction PNGs always store meters * 1000 regardless of dataset profile
PREDICTION_PNG_SCALE = 0.001

QUANTITATIVE_FIELDS = ("delta1", "delta2", "delta3", "rel", "rms", "log10", "sq_rel")
QUALITATIVE_FIELDS = ("mssim", "edge_f1", "mean_normal_error")


@dataclass
class MetricReport:
    """Mean per-image metrics for a prediction set."""

    delta1: float
    delta2: float
    delta3: float
    rel: float
    rms: float
    log10: float
    sq_rel: float
    mssim: float | None
    edge_f1: float | None
    mean_normal_error: float | None
    n_images: int

    def __post_init__(self):
        if not self.delta1 <= self.delta2 + 1e-12 or not self.delta2 <= self.delta3 + 1e-12:
            raise ValueError("threshold accuracies must nest: delta1 <= delta2 <= delta3")

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_text(self, path) -> None:
        lines = []
        for key, value in self.to_dict().items():
            if value is None:
                continue
            lines.append(f"{key}={value}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_json(cls, path) -> "MetricReport":
        data = json.loads(Path(path).read_text())
        return cls(**data)


@dataclass(frozen=True)
class NormalMap:
    """Per-pixel unit 3-vectors (H, W, 3), screen-space convention."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 3:
            raise ValueError(f"expected (H, W, 3) array, got shape {v.shape}")
        norms = np.sqrt((v * v).sum(axis=2))
        if v.size and np.any(np.abs(norms - 1.0) > 1e-6):
            raise ValueError("normal vectors must have unit length")
        object.__setattr__(self, "values", v)


def _values_and_mask(x, mask=None) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(x, DepthMap):
        return x.values, x.valid_mask
    v = np.asarray(x, dtype=np.float64)
    m = np.ones(v.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return v, m


def _paired(y, yhat) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    yv, ym = _values_and_mask(y)
    pv, pm = _values_and_mask(yhat)
    if yv.shape != pv.shape:
        raise ValueError(f"shape mismatch {yv.shape} vs {pv.shape}")
    m = ym & pm
    if not m.any():
        raise ValueError("no jointly valid pixels")
    return yv[m], pv[m], m


def rel(y, yhat) -> float:
    """Mean relative error |y - yhat| / y over valid pixels."""
    yv, pv, _ = _paired(y, yhat)
    if np.any(yv <= 0.0):
        raise ValueError("ground-truth depth must be positive on valid pixels")
    return float(np.mean(np.abs(yv - pv) / yv))


def rms(y, yhat) -> float:
    """Root mean squared error over valid pixels."""
    yv, pv, _ = _paired(y, yhat)
    return float(np.sqrt(np.mean((yv - pv) ** 2)))


def log10_error(y, yhat) -> float:
    """Mean |log10 y - log10 yhat| over valid pixels."""
    yv, pv, _ = _paired(y, yhat)
    if np.any(yv <= 0.0) or np.any(pv <= 0.0):
        raise ValueError("log10 error requires positive depths")
    return float(np.mean(np.abs(np.log10(yv) - np.log10(pv))))


def delta_accuracy(y, yhat, thr: float = DELTA_THRESHOLD) -> float:
    """Fraction of pixels whose max(y/yhat, yhat/y) is strictly below thr."""
    yv, pv, _ = _paired(y, yhat)
    if np.any(yv <= 0.0) or np.any(pv <= 0.0):
        raise ValueError("threshold accuracy requires positive depths")
    ratio = np.maximum(yv / pv, pv / yv)
    return float(np.mean(ratio < thr))


def sq_rel(y, yhat) -> float:
    """Mean squared relative error (y - yhat)^2 / y over valid pixels."""
    yv, pv, _ = _paired(y, yhat)
    if np.any(yv <= 0.0):
        raise ValueError("ground-truth depth must be positive on valid pixels")
    return float(np.mean((yv - pv) ** 2 / yv))


def median_scale(y: DepthMap, yhat: DepthMap) -> DepthMap:
    """Rescale yhat so its valid-pixel median matches the ground truth's."""
    med_y = float(np.median(y.values[y.valid_mask]))
    med_p = float(np.median(yhat.values[yhat.valid_mask]))
    if med_p <= 0.0:
        raise ValueError("prediction median must be positive")
    factor = med_y / med_p
    return DepthMap(yhat.values * factor, yhat.valid_mask.copy())


def render_grayscale(d: DepthMap, value_range: tuple[float, float] | None = None) -> np.ndarray:
    """Render depth to [0, 1] by linear normalization.

    With no explicit range the map's own valid [min, max] is used; a paired
    prediction should be rendered with the ground truth's range so both
    share one scale. A degenerate (constant) range renders as 0.5.
    """
    if value_range is None:
        vals = d.values[d.valid_mask]
        lo, hi = float(vals.min()), float(vals.max())
    else:
        lo, hi = map(float, value_range)
    if hi <= lo:
        return np.full(d.values.shape, 0.5)
    return np.clip((d.values - lo) / (hi - lo), 0.0, 1.0)


def _window_means(a: np.ndarray, k: int) -> np.ndarray:
    windows = np.lib.stride_tricks.sliding_window_view(a, (k, k))
    return windows.mean(axis=(-2, -1))


def ssim_index(a: np.ndarray, b: np.ndarray, p: SsimParams) -> float:
    """Mean local SSIM over fully-covered uniform windows (numpy path)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    k = p.window
    if a.shape[0] < k or a.shape[1] < k:
        raise ValueError(f"map {a.shape} smaller than window {k}")
    mu_a = _window_means(a, k)
    mu_b = _window_means(b, k)
    var_a = _window_means(a * a, k) - mu_a * mu_a
    var_b = _window_means(b * b, k) - mu_b * mu_b
    cov = _window_means(a * b, k) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + p.c1) * (2.0 * cov + p.c2)
    den = (mu_a * mu_a + mu_b * mu_b + p.c1) * (var_a + var_b + p.c2)
    return float(np.mean(num / den))


def mssim(gt_set, pred_set, p: SsimParams) -> float:
    """Mean per-image SSIM over equal-length sets of grayscale renderings."""
    gt_set = list(gt_set)
    pred_set = list(pred_set)
    if len(gt_set) != len(pred_set):
        raise ValueError("sets must have equal length")
    if not gt_set:
        raise ValueError("empty set")
    return math.fsum(ssim_index(g, q, p) for g, q in zip(gt_set, pred_set)) / len(gt_set)


_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
_SOBEL_Y = _SOBEL_X.T


def _correlate3(a: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    p = np.pad(a, 1, mode="edge")
    out = np.zeros_like(a)
    for di in range(3):
        for dj in range(3):
            w = kernel[di, dj]
            if w != 0.0:
                out += w * p[di : di + a.shape[0], dj : dj + a.shape[1]]
    return out


def sobel_magnitude(d) -> np.ndarray:
    """Gradient magnitude sqrt(Sx^2 + Sy^2) with replicate borders.

    Operates on depth in meters; a unit step produces an interior magnitude
    of 4 along the edge.
    """
    v, _ = _values_and_mask(d)
    sx = _correlate3(v, _SOBEL_X)
    sy = _correlate3(v, _SOBEL_Y)
    return np.sqrt(sx * sx + sy * sy)


def edge_f1(y, yhat, threshold: float = EDGE_THRESHOLD) -> float:
    """F1 score between thresholded Sobel-magnitude edge maps.

    Ground-truth edges are the positives. Degenerate conventions: both edge
    sets empty -> 1.0, exactly one empty -> 0.0.
    """
    gt_edges = sobel_magnitude(y) > threshold
    pr_edges = sobel_magnitude(yhat) > threshold
    n_gt = int(gt_edges.sum())
    n_pr = int(pr_edges.sum())
    if n_gt == 0 and n_pr == 0:
        return 1.0
    if n_gt == 0 or n_pr == 0:
        return 0.0
    tp = int((gt_edges & pr_edges).sum())
    if tp == 0:
        return 0.0
    precision = tp / n_pr
    recall = tp / n_gt
    return float(2.0 * precision * recall / (precision + recall))


def normals_from_depth(d) -> NormalMap:
    """Screen-space normals normalize((-dz/dx, -dz/dy, 1)).

    Derivatives are central differences with replicate borders, so a flat
    plane yields (0, 0, 1) everywhere.
    """
    v, _ = _values_and_mask(d)
    p = np.pad(v, 1, mode="edge")
    dx = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    dy = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    n = np.stack([-dx, -dy, np.ones_like(v)], axis=2)
    n /= np.sqrt((n * n).sum(axis=2, keepdims=True))
    return NormalMap(n)


def mean_normal_error(y, yhat) -> float:
    """Mean cosine distance 1 - n_gt . n_pred, in [0, 2]."""
    n_gt = normals_from_depth(y).values
    n_pr = normals_from_depth(yhat).values
    return float(np.mean(1.0 - (n_gt * n_pr).sum(axis=2)))


def compute_image_metrics(
    gt: DepthMap,
    pred: DepthMap,
    crop: CropRect | None = None,
    scaled: bool = False,
    qualitative: bool = True,
    ssim_params: SsimParams | None = None,
) -> dict[str, float]:
    """All per-image metrics for one ground-truth/prediction pair.

    The prediction is resized bilinearly to the ground-truth resolution if
    needed; the crop applies to both; median scaling (optional) runs after
    cropping. Qualitative measures compare the cropped maps as rendered
    images and assume dense ground truth.
    """
    if pred.values.shape != gt.values.shape:
        pred = DepthMap(
            resize_array_bilinear(pred.values, gt.height, gt.width),
            np.ones((gt.height, gt.width), dtype=bool),
        )
    if crop is not None:
        gt = center_crop(gt, crop)
        pred = center_crop(pred, crop)
    if scaled:
        pred = median_scale(gt, pred)
    out = {
        "delta1": delta_accuracy(gt, pred, DELTA_THRESHOLD),
        "delta2": delta_accuracy(gt, pred, DELTA_THRESHOLD**2),
        "delta3": delta_accuracy(gt, pred, DELTA_THRESHOLD**3),
        "rel": rel(gt, pred),
        "rms": rms(gt, pred),
        "log10": log10_error(gt, pred),
        "sq_rel": sq_rel(gt, pred),
    }
    if qualitative:
        params = ssim_params or SsimParams(dynamic_range=1.0)
        vals = gt.values[gt.valid_mask]
        gt_range = (float(vals.min()), float(vals.max()))
        out["mssim"] = ssim_index(
            render_grayscale(gt), render_grayscale(pred, gt_range), params
        )
        out["edge_f1"] = edge_f1(gt, pred)
        out["mean_normal_error"] = mean_normal_error(gt, pred)
    return out


def aggregate_image_metrics(per_image: list[dict[str, float]]) -> MetricReport:
    """Average per-image metrics into a report (compensated summation)."""
    if not per_image:
        raise ValueError("no images to aggregate")
    n = len(per_image)
    qualitative = all("mssim" in m for m in per_image)

    def mean(key):
        return math.fsum(m[key] for m in per_image) / n

    return MetricReport(
        delta1=mean("delta1"),
        delta2=mean("delta2"),
        delta3=mean("delta3"),
        rel=mean("rel"),
        rms=mean("rms"),
        log10=mean("log10"),
        sq_rel=mean("sq_rel"),
        mssim=mean("mssim") if qualitative else None,
        edge_f1=mean("edge_f1") if qualitative else None,
        mean_normal_error=mean("mean_normal_error") if qualitative else None,
        n_images=n,
    )


def evaluate_set(
    gt_dir,
    pred_dir,
    profile,
    scaled: bool = False,
    qualitative: bool = True,
    ids: list[str] | None = None,
    ssim_params: SsimParams | None = None,
) -> MetricReport:
    """Evaluate a directory of prediction PNGs against ground truth.

    Ground-truth PNGs are decoded with the profile's depth scale and
    clipped to its [d_min, d_max]; predictions are PNGs storing
    meters * 1000. Every ground-truth id must have a matching prediction.
    """
    from . import data  # local import: data depends on metrics-free modules only

    gt_dir = Path(gt_dir)
    pred_dir = Path(pred_dir)
    if ids is None:
        ids = sorted(p.stem for p in gt_dir.glob("*.png"))
    if not ids:
        raise ValueError(f"no ground-truth images found in {gt_dir}")
    per_image = []
    for image_id in ids:
        pred_path = pred_dir / f"{image_id}.png"
        if not pred_path.exists():
            raise FileNotFoundError(f"missing prediction for id {image_id}")
        gt = data.load_depth_png(gt_dir / f"{image_id}.png", profile.depth_scale)
        gt = _clip_valid(gt, profile.d_min, profile.d_max)
        pred = data.load_depth_png(pred_path, PREDICTION_PNG_SCALE)
        per_image.append(
            compute_image_metrics(
                gt,
                pred,
                crop=profile.eval_crop,
                scaled=scaled,
                qualitative=qualitative,
                ssim_params=ssim_params,
            )
        )
    return aggregate_image_metrics(per_image)


def _clip_valid(d: DepthMap, d_min: float, d_max: float) -> DepthMap:
    from .core import clip_depth

    return clip_depth(d, d_min, d_max)
