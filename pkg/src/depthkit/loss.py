"""Composite training loss: weighted point-wise L1 + gradient L1 + SSIM term.

All functions accept torch tensors (or numpy arrays, converted on entry)
shaped (H, W) or (B, 1, H, W) and return scalar tensors so they can sit on
the autodiff path during training. An optional boolean mask restricts the
terms to valid pixels for sparse ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

__all__ = [
    "LossWeights",
    "SsimParams",
    "image_gradients",
    "l_depth",
    "l_grad",
    "ssim",
    "l_ssim",
    "composite_loss",
    "composite_loss_terms",
    "gradient_check",
]


@dataclass(frozen=True)
class LossWeights:
    """Weighting of the point-wise depth term within the composite loss."""

    lambda_depth: float = 0.1

    def __post_init__(self):
        if self.lambda_depth <= 0.0:
            raise ValueError("lambda_depth must be positive")


@dataclass(frozen=True)
class SsimParams:
    """Uniform-window SSIM parameters.

    c1/c2 default to (0.01 * L)^2 and (0.03 * L)^2 for dynamic range L. For
    reciprocal targets in [m/d_max, m/d_min] the natural range is their
    difference (24 for the 0.4-10 m indoor profile); grayscale renderings
    use L = 1.
    """

    window: int = 7
    dynamic_range: float = 24.0
    c1: float | None = None
    c2: float | None = None

    def __post_init__(self):
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError("window must be odd and >= 3")
        if self.dynamic_range <= 0.0:
            raise ValueError("dynamic_range must be positive")
        if self.c1 is None:
            object.__setattr__(self, "c1", (0.01 * self.dynamic_range) ** 2)
        if self.c2 is None:
            object.__setattr__(self, "c2", (0.03 * self.dynamic_range) ** 2)
        if self.c1 <= 0.0 or self.c2 <= 0.0:
            raise ValueError("c1 and c2 must be positive")


def _as_batched(x) -> torch.Tensor:
    """Coerce (H, W), (B, H, W) or (B, 1, H, W) input to (B, 1, H, W)."""
    t = torch.as_tensor(x)
    if t.dim() == 2:
        t = t.unsqueeze(0).unsqueeze(0)
    elif t.dim() == 3:
        t = t.unsqueeze(1)
    elif t.dim() != 4:
        raise ValueError(f"expected 2-4 dims, got {t.dim()}")
    if not t.is_floating_point():
        t = t.double()
    return t


def _pair(y, yhat, mask=None):
    yt, pt = _as_batched(y), _as_batched(yhat)
    if yt.shape != pt.shape:
        raise ValueError(f"shape mismatch {tuple(yt.shape)} vs {tuple(pt.shape)}")
    if mask is None:
        return yt, pt, None
    mt = _as_batched(mask).to(dtype=torch.bool)
    if mt.shape != yt.shape:
        raise ValueError("mask shape must match inputs")
    return yt, pt, mt


def image_gradients(t) -> tuple[torch.Tensor, torch.Tensor]:
    """Forward differences along x and y, zero-padded to the input shape."""
    tt = _as_batched(t)
    gx = torch.zeros_like(tt)
    gy = torch.zeros_like(tt)
    gx[..., :, :-1] = tt[..., :, 1:] - tt[..., :, :-1]
    gy[..., :-1, :] = tt[..., 1:, :] - tt[..., :-1, :]
    return gx, gy


def l_depth(y, yhat, mask=None) -> torch.Tensor:
    """Mean absolute difference over the (masked-in) pixels."""
    yt, pt, mt = _pair(y, yhat, mask)
    diff = (yt - pt).abs()
    if mt is None:
        return diff.mean()
    n = mt.sum()
    if n == 0:
        raise ValueError("mask excludes every pixel")
    return (diff * mt).sum() / n


def l_grad(y, yhat, mask=None) -> torch.Tensor:
    """Mean L1 difference of the forward-difference gradients.

    With a mask, only gradient samples whose two source pixels are both
    valid contribute, and the sum is normalized by the count of valid
    pixels (matching the unmasked definition when the mask is full).
    """
    yt, pt, mt = _pair(y, yhat, mask)
    gx_y, gy_y = image_gradients(yt)
    gx_p, gy_p = image_gradients(pt)
    dx = (gx_y - gx_p).abs()
    dy = (gy_y - gy_p).abs()
    if mt is None:
        return (dx + dy).mean()
    mx = torch.zeros_like(mt)
    my = torch.zeros_like(mt)
    mx[..., :, :-1] = mt[..., :, 1:] & mt[..., :, :-1]
    my[..., :-1, :] = mt[..., 1:, :] & mt[..., :-1, :]
    n = mt.sum()
    if n == 0:
        raise ValueError("mask excludes every pixel")
    return ((dx * mx).sum() + (dy * my).sum()) / n


def _window_mean(x: torch.Tensor, window: int) -> torch.Tensor:
    kernel = torch.ones(
        1, 1, window, window, dtype=x.dtype, device=x.device
    ) / float(window * window)
    return F.conv2d(x, kernel)


def ssim(a, b, p: SsimParams = SsimParams(), mask=None) -> torch.Tensor:
    """Mean local SSIM over every fully-covered uniform window."""
    at, bt, mt = _pair(a, b, mask)
    k = p.window
    if at.shape[-2] < k or at.shape[-1] < k:
        raise ValueError(f"map {tuple(at.shape[-2:])} smaller than window {k}")
    if mt is not None:
        at = at * mt
        bt = bt * mt
    mu_a = _window_mean(at, k)
    mu_b = _window_mean(bt, k)
    var_a = _window_mean(at * at, k) - mu_a * mu_a
    var_b = _window_mean(bt * bt, k) - mu_b * mu_b
    cov = _window_mean(at * bt, k) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + p.c1) * (2.0 * cov + p.c2)
    den = (mu_a * mu_a + mu_b * mu_b + p.c1) * (var_a + var_b + p.c2)
    smap = num / den
    if mt is None:
        return smap.mean()
    # keep only windows whose full neighborhood is valid
    cover = _window_mean(mt.to(at.dtype), k)
    full = cover >= 1.0 - 1e-9
    if not bool(full.any()):
        return torch.zeros((), dtype=at.dtype)
    return smap[full].mean()


def l_ssim(y, yhat, p: SsimParams = SsimParams(), mask=None) -> torch.Tensor:
    """(1 - SSIM) / 2, bounded in [0, 1]."""
    return (1.0 - ssim(y, yhat, p, mask)) / 2.0


def composite_loss_terms(
    y,
    yhat,
    w: LossWeights = LossWeights(),
    p: SsimParams = SsimParams(),
    mask=None,
) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Total loss plus the individual terms, for logging."""
    terms = {
        "l_depth": l_depth(y, yhat, mask),
        "l_grad": l_grad(y, yhat, mask),
        "l_ssim": l_ssim(y, yhat, p, mask),
    }
    total = w.lambda_depth * terms["l_depth"] + terms["l_grad"] + terms["l_ssim"]
    return total, terms


def composite_loss(
    y,
    yhat,
    w: LossWeights = LossWeights(),
    p: SsimParams = SsimParams(),
    mask=None,
) -> torch.Tensor:
    """lambda * l_depth + l_grad + l_ssim."""
    total, _ = composite_loss_terms(y, yhat, w, p, mask)
    return total


def _near_l1_kink(y: torch.Tensor, yhat: torch.Tensor, i: int, j: int, eps: float) -> bool:
    """True if perturbing pixel (i, j) of yhat by +-eps could cross an
    absolute-value kink of the depth or gradient terms."""
    guard = 10.0 * eps
    h, w = y.shape[-2:]
    if abs(float(y[..., i, j] - yhat[..., i, j])) < guard:
        return True
    d = y - yhat
    # gx kinks at (i, j) and (i, j-1); gy kinks at (i, j) and (i-1, j)
    if j + 1 < w and abs(float(d[..., i, j + 1] - d[..., i, j])) < guard:
        return True
    if j - 1 >= 0 and abs(float(d[..., i, j] - d[..., i, j - 1])) < guard:
        return True
    if i + 1 < h and abs(float(d[..., i + 1, j] - d[..., i, j])) < guard:
        return True
    if i - 1 >= 0 and abs(float(d[..., i, j] - d[..., i - 1, j])) < guard:
        return True
    return False


def gradient_check(
    loss_fn,
    y,
    yhat0,
    epsilon: float = 1e-5,
    num_samples: int = 48,
    rng: np.random.Generator | None = None,
    skip_kinks: bool = True,
    analytic_scale: float = 1.0,
) -> float:
    """Max relative error between autograd and central finite differences.

    Samples pixels of yhat0, compares d loss / d yhat against
    (L(+eps) - L(-eps)) / (2 eps) in double precision, and skips pixels
    whose +-eps neighborhood straddles an L1 kink. analytic_scale is a test
    hook that perturbs the analytic side to prove the harness can fail.
    """
    y64 = _as_batched(y).double()
    p64 = _as_batched(yhat0).double()
    rng = rng or np.random.default_rng(0)

    var = p64.clone().requires_grad_(True)
    loss_fn(y64, var).backward()
    analytic = var.grad.detach() * analytic_scale

    h, w = p64.shape[-2], p64.shape[-1]
    coords = {(int(r // w), int(r % w)) for r in rng.integers(0, h * w, num_samples)}
    max_rel = 0.0
    for i, j in sorted(coords):
        if skip_kinks and _near_l1_kink(y64, p64, i, j, epsilon):
            continue
        plus = p64.clone()
        plus[..., i, j] += epsilon
        minus = p64.clone()
        minus[..., i, j] -= epsilon
        fd = float(loss_fn(y64, plus) - loss_fn(y64, minus)) / (2.0 * epsilon)
        a = float(analytic[..., i, j].sum())
        denom = max(abs(a), abs(fd))
        if denom < 1e-10:
            continue
        max_rel = max(max_rel, abs(a - fd) / denom)
    return max_rel
