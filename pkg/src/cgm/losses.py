"""Structure loss (boundary-weighted BCE + weighted IoU + SSIM) and the multi-scale combined loss.

Every loss returns its value together with the analytic gradient with respect
to the logits, so the toy networks can be trained without a tensor library.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.ndimage import uniform_filter

from .imagecore import as_logits, as_mask, as_prob, resize_bilinear, sigmoid_map

IOU_SMOOTH = 1.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


@dataclass(frozen=True)
class LossWeights:
    w_bce: float = 4.0
    w_iou: float = 1.0
    w_ssim: float = 2.0

    def __post_init__(self):
        if min(self.w_bce, self.w_iou, self.w_ssim) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class LossBreakdown:
    wbce: float
    wiou: float
    ssim: float
    total: float
    grad: np.ndarray = field(repr=False)


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")


def boundary_weight_map(y) -> np.ndarray:
    """1 + 5 * |box31(y) - y| with edge-replicating padding; values in [1, 6]."""
    y = as_mask(y).astype(np.float64)
    pooled = uniform_filter(y, size=31, mode="nearest")
    return 1.0 + 5.0 * np.abs(pooled - y)


def wbce(p, y, w) -> tuple[float, np.ndarray]:
    """Weighted mean of binary cross-entropy computed from logits."""
    p = as_logits(p)
    y = as_mask(y).astype(np.float64)
    w = np.asarray(w, dtype=np.float64)
    _check_shapes(p, y)
    _check_shapes(p, w)
    # max(p, 0) - p*y + log(1 + exp(-|p|))
    bce = np.maximum(p, 0.0) - p * y + np.log1p(np.exp(-np.abs(p)))
    wsum = w.sum()
    loss = float((w * bce).sum() / wsum)
    grad = w * (sigmoid_map(p) - y) / wsum
    return loss, grad


def wiou(q, y, w) -> tuple[float, np.ndarray]:
    """1 - weighted soft IoU with +1 smoothing; gradient is taken w.r.t. the logits behind ``q``."""
    q = as_prob(q)
    y = as_mask(y).astype(np.float64)
    w = np.asarray(w, dtype=np.float64)
    _check_shapes(q, y)
    _check_shapes(q, w)
    inter = (w * q * y).sum() + IOU_SMOOTH
    union = (w * (q + y - q * y)).sum() + IOU_SMOOTH
    loss = float(1.0 - inter / union)
    dq = -(w * y * union - inter * w * (1.0 - y)) / union ** 2
    return loss, dq * q * (1.0 - q)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


_G1 = gaussian_window()


def _filter_valid(x: np.ndarray) -> np.ndarray:
    # separable Gaussian correlation, no padding
    k = _G1.size
    t = sliding_window_view(x, k, axis=0) @ _G1
    return sliding_window_view(t, k, axis=1) @ _G1


def _filter_adjoint(g: np.ndarray) -> np.ndarray:
    k = _G1.size
    return _filter_valid(np.pad(g, k - 1))


def ssim_loss(q, y) -> tuple[float, np.ndarray]:
    """1 - mean SSIM over all fully-contained 11x11 Gaussian windows."""
    q = as_prob(q)
    yb = as_mask(y).astype(np.float64)
    _check_shapes(q, yb)
    if min(q.shape) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs maps of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {q.shape}")
    mx = _filter_valid(q)
    my = _filter_valid(yb)
    exx = _filter_valid(q * q)
    eyy = _filter_valid(yb * yb)
    exy = _filter_valid(q * yb)
    vx = exx - mx * mx
    vy = eyy - my * my
    cxy = exy - mx * my
    a1 = 2 * mx * my + SSIM_C1
    a2 = 2 * cxy + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = vx + vy + SSIM_C2
    num = a1 * a2
    den = b1 * b2
    smap = num / den
    n = smap.size
    loss = float(1.0 - smap.mean())

    # dS w.r.t. the raw moments E[x], E[x^2], E[xy]
    dnum_dm = 2 * my * a2 + a1 * (-2 * my)
    dden_dm = 2 * mx * b2 + b1 * (-2 * mx)
    ds_dm = (dnum_dm * den - num * dden_dm) / den ** 2
    ds_dxx = -num * b1 / den ** 2
    ds_dxy = 2 * a1 / den
    scale = -1.0 / n
    dq = scale * (
        _filter_adjoint(ds_dm) + 2 * q * _filter_adjoint(ds_dxx) + yb * _filter_adjoint(ds_dxy)
    )
    return loss, dq * q * (1.0 - q)


def structure_loss(p, y, lw: LossWeights = LossWeights()) -> LossBreakdown:
    p = as_logits(p)
    y = as_mask(y)
    _check_shapes(p, y)
    w = boundary_weight_map(y)
    q = sigmoid_map(p)
    l_bce, g_bce = wbce(p, y, w)
    l_iou, g_iou = wiou(q, y, w)
    l_ssim, g_ssim = ssim_loss(q, y)
    total = lw.w_bce * l_bce + lw.w_iou * l_iou + lw.w_ssim * l_ssim
    grad = lw.w_bce * g_bce + lw.w_iou * g_iou + lw.w_ssim * g_ssim
    return LossBreakdown(l_bce, l_iou, l_ssim, float(total), grad)


# ------------------------------------------------------------ multi-scale

DEFAULT_SCALE_COUNTS = {"local": 6, "global": 5, "token": 4}
DEFAULT_COEFFS = (0.3, 0.3, 1.0)  # (global, token, local)


def mask_at(y, h: int, w: int) -> np.ndarray:
    """Ground truth resampled to (h, w): bilinear, then re-binarised at 0.5."""
    y = as_mask(y)
    if y.shape == (h, w):
        return y
    return as_mask((resize_bilinear(y.astype(np.float64), h, w) >= 0.5).astype(np.uint8))


@dataclass
class MultiScaleOutputs:
    local: list = field(default_factory=list)
    global_: list = field(default_factory=list)
    token: list = field(default_factory=list)

    @classmethod
    def from_predictions(cls, local, global_, token, y) -> "MultiScaleOutputs":
        """Pair every logit map with ``y`` resampled to its resolution."""
        def pair(maps):
            return [(as_logits(m), mask_at(y, *np.shape(m))) for m in maps]
        return cls(pair(local), pair(global_), pair(token))


@dataclass
class CombinedLoss:
    total: float
    local: float
    global_: float
    token: float
    grads: dict = field(repr=False)


def combined_loss(ms: MultiScaleOutputs, lw: LossWeights = LossWeights(),
                  coeffs: tuple = DEFAULT_COEFFS) -> CombinedLoss:
    """c_g * sum(global) + c_t * sum(token) + c_l * sum(local) of structure losses."""
    if not ms.local:
        raise ValueError("the local list must contain at least the final prediction")
    c_global, c_token, c_local = coeffs
    sums = {}
    grads = {}
    for name, pairs, c in (("local", ms.local, c_local), ("global_", ms.global_, c_global),
                           ("token", ms.token, c_token)):
        s = 0.0
        gl = []
        for p, y in pairs:
            _check_shapes(np.asarray(p), np.asarray(y))
            b = structure_loss(p, y, lw)
            s += b.total
            gl.append(c * b.grad)
        sums[name] = s
        grads[name] = gl
    total = c_global * sums["global_"] + c_token * sums["token"] + c_local * sums["local"]
    return CombinedLoss(float(total), sums["local"], sums["global_"], sums["token"], grads)
