"""Segmentation / salient-object evaluation measures.

All accumulation is in float64. ``q`` is a probability map, ``y`` a binary mask.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.ndimage import convolve, distance_transform_edt

from .imagecore import as_mask, as_prob

BETA2_MAX_F = 0.3
BETA2_WEIGHTED_F = 1.0

# max-F sweep: binarise with q >= k/255, k = 0..255
F_THRESHOLDS = np.arange(256, dtype=np.float64) / 255.0
# E-measure sweep: bin midpoints, so a binary map binarises to itself at every threshold
E_THRESHOLDS = (np.arange(256, dtype=np.float64) + 0.5) / 256.0

METRIC_NAMES = ("max_f", "weighted_f", "e_measure", "s_measure", "mae", "dice", "iou", "ber", "acc")


class DegenerateGroundTruth(ValueError):
    """Ground truth without any foreground pixel; the measure is undefined."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(frozen=True)
class MetricReport:
    max_f: float
    weighted_f: float
    e_measure: float
    s_measure: float
    mae: float
    dice: float
    iou: float
    ber: float
    acc: float
    n_images: int = 1
    n_excluded: int = 0

    def scores(self) -> dict:
        return {k: v for k, v in asdict(self).items() if k in METRIC_NAMES}


def _pair(q, y):
    q = as_prob(q)
    y = as_mask(y)
    if q.shape != y.shape:
        raise ValueError(f"shape mismatch: {q.shape} vs {y.shape}")
    return q, y.astype(bool)


def _require_foreground(y: np.ndarray) -> None:
    if not y.any():
        raise DegenerateGroundTruth("ground truth has no foreground pixel")


def mae(q, y) -> float:
    q, y = _pair(q, y)
    return float(np.mean(np.abs(q - y)))


# ------------------------------------------------------- threshold sweeps

def _sweep_counts(q: np.ndarray, y: np.ndarray, thresholds: np.ndarray):
    """(tp, fp, fn, tn) arrays for the predicate q >= t at every threshold."""
    n = q.size
    n_fg = int(y.sum())
    all_sorted = np.sort(q, axis=None)
    fg_sorted = np.sort(q[y], axis=None)
    pred_pos = n - np.searchsorted(all_sorted, thresholds, side="left")
    tp = n_fg - np.searchsorted(fg_sorted, thresholds, side="left")
    fp = pred_pos - tp
    fn = n_fg - tp
    tn = n - n_fg - fp
    return tp, fp, fn, tn


def _f_beta(tp, fp, fn, beta2: float):
    tp = np.asarray(tp, dtype=np.float64)
    pp = tp + fp
    prec = np.divide(tp, pp, out=np.zeros_like(tp), where=pp > 0)
    rec = tp / (tp + fn)
    den = beta2 * prec + rec
    return np.divide((1 + beta2) * prec * rec, den, out=np.zeros_like(tp), where=den > 0)


def f_curve(q, y, beta2: float = BETA2_MAX_F) -> np.ndarray:
    q, y = _pair(q, y)
    _require_foreground(y)
    tp, fp, fn, _ = _sweep_counts(q, y, F_THRESHOLDS)
    return _f_beta(tp, fp, fn, beta2)


def max_f(q, y) -> float:
    """Maximum F-beta (beta^2 = 0.3) over the 256-level threshold sweep."""
    return float(f_curve(q, y).max())


def _enhanced_alignment(b: float, yv: float, mb: float, my: float) -> float:
    phi_b = b - mb
    phi_y = yv - my
    den = phi_b * phi_b + phi_y * phi_y
    xi = 2 * phi_b * phi_y / den if den > 0 else 0.0
    return (xi + 1) ** 2 / 4


def e_curve(q, y) -> np.ndarray:
    q, y = _pair(q, y)
    n = q.size
    tp, fp, fn, tn = _sweep_counts(q, y, E_THRESHOLDS)
    n_fg = int(y.sum())
    if n_fg == 0:
        return (fn + tn) / n  # 1 - binarised prediction, averaged
    if n_fg == n:
        return (tp + fp) / n
    my = n_fg / n
    out = np.empty(len(E_THRESHOLDS))
    for i in range(len(E_THRESHOLDS)):
        mb = (tp[i] + fp[i]) / n
        s = (tp[i] * _enhanced_alignment(1.0, 1.0, mb, my)
             + fp[i] * _enhanced_alignment(1.0, 0.0, mb, my)
             + fn[i] * _enhanced_alignment(0.0, 1.0, mb, my)
             + tn[i] * _enhanced_alignment(0.0, 0.0, mb, my))
        out[i] = s / n
    return out


def e_measure(q, y) -> float:
    """Mean enhanced-alignment measure over the 256 midpoint thresholds."""
    return float(np.mean(e_curve(q, y)))


# ------------------------------------------------------- weighted F

def matlab_gauss2d(shape=(7, 7), sigma: float = 5.0) -> np.ndarray:
    m, n = [(s - 1) / 2 for s in shape]
    yy, xx = np.ogrid[-m:m + 1, -n:n + 1]
    h = np.exp(-(xx * xx + yy * yy) / (2 * sigma * sigma))
    h[h < np.finfo(h.dtype).eps * h.max()] = 0
    return h / h.sum()


def nearest_foreground(y: np.ndarray):
    """Squared distance and (row, col) of the nearest foreground pixel.

    Ties between equidistant foreground pixels go to the smallest (row, col).
    """
    h, w = y.shape
    dist = distance_transform_edt(~y)
    sq = np.rint(dist * dist).astype(np.int64)
    rows, cols = np.indices((h, w))
    bg = np.flatnonzero(~y)
    if bg.size == 0:
        return sq, rows, cols
    s_pix = sq.flat[bg]
    values = np.unique(s_pix)
    # every integer offset whose squared length is a distance that occurs,
    # ordered by (length, dy, dx): the first foreground hit is the answer
    r = math.isqrt(int(values[-1]))
    dy, dx = np.mgrid[-r:r + 1, -r:r + 1].reshape(2, -1).astype(np.int64)
    n2 = dy * dy + dx * dx
    keep = np.isin(n2, values)
    dy, dx, n2 = dy[keep], dx[keep], n2[keep]
    order = np.lexsort((dx, dy, n2))
    dy, dx, n2 = dy[order], dx[order], n2[order]
    first = np.searchsorted(n2, values, side="left")
    count = np.searchsorted(n2, values, side="right") - first
    sidx = np.searchsorted(values, s_pix)
    start, cnt = first[sidx], count[sidx]
    pr, pc = np.divmod(bg, w)
    todo = np.arange(bg.size)
    k = 0
    while todo.size:
        todo = todo[k < cnt[todo]]
        if not todo.size:
            break
        o = start[todo] + k
        ty, tx = pr[todo] + dy[o], pc[todo] + dx[o]
        inside = (ty >= 0) & (ty < h) & (tx >= 0) & (tx < w)
        hit = np.zeros(todo.size, dtype=bool)
        hit[inside] = y[ty[inside], tx[inside]]
        rows.flat[bg[todo[hit]]] = ty[hit]
        cols.flat[bg[todo[hit]]] = tx[hit]
        todo = todo[~hit]
        k += 1
    assert k == 0 or todo.size == 0, "distance transform and lattice search disagree"
    return sq, rows, cols


def weighted_f(q, y, border: str = "nearest") -> float:
    """Weighted F-measure (beta^2 = 1) with location-dependent error weighting.

    ``border`` is the padding of the 7x7 error smoothing. The default replicates
    edge values; ``"constant"`` zero-pads like the common MATLAB/py-sod code,
    which lets a fully wrong prediction earn credit along the image border.
    """
    q, y = _pair(q, y)
    _require_foreground(y)
    gt = y.astype(np.float64)
    err = np.abs(q - gt)
    sq, rows, cols = nearest_foreground(y)
    # background errors take the value at their nearest foreground pixel
    et = err[rows, cols]
    ea = convolve(et, matlab_gauss2d(), mode=border, cval=0.0)
    min_e_ea = np.where(y & (ea < err), ea, err)
    dist = np.sqrt(sq.astype(np.float64))
    importance = np.where(y, 1.0, 2.0 - np.exp(math.log(0.5) / 5.0 * dist))
    ew = min_e_ea * importance
    tpw = gt.sum() - ew[y].sum()
    fpw = ew[~y].sum()
    recall = 1.0 - ew[y].mean()
    prec = tpw / (tpw + fpw) if tpw + fpw > 0 else 0.0
    den = BETA2_WEIGHTED_F * prec + recall
    if den <= 0:
        return 0.0
    return float(min(1.0, (1 + BETA2_WEIGHTED_F) * prec * recall / den))


# ------------------------------------------------------- S-measure

def _object_score(values: np.ndarray, lam: float = 0.5) -> float:
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return float(2 * x / (x * x + 1 + 2 * lam * sigma))


def _s_object(q: np.ndarray, y: np.ndarray) -> float:
    u = y.mean()
    o_fg = _object_score(q[y])
    o_bg = _object_score(1.0 - q[~y])
    return u * o_fg + (1 - u) * o_bg


def _centroid(y: np.ndarray) -> tuple[int, int]:
    r, c = np.nonzero(y)
    return int(np.round(c.mean())) + 1, int(np.round(r.mean())) + 1


def _region_ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    x = p.mean()
    yy = g.mean()
    d = max(n - 1, 1)
    sx = ((p - x) ** 2).sum() / d
    sy = ((g - yy) ** 2).sum() / d
    sxy = ((p - x) * (g - yy)).sum() / d
    alpha = 4 * x * yy * sxy
    beta = (x * x + yy * yy) * (sx + sy)
    if alpha != 0:
        return float(alpha / beta)
    return 1.0 if beta == 0 else 0.0


def _s_region(q: np.ndarray, y: np.ndarray) -> float:
    h, w = y.shape
    cx, cy = _centroid(y)
    gt = y.astype(np.float64)
    acc = 0.0
    for rs, cs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        p = q[rs, cs]
        if p.size == 0:
            continue
        acc += p.size * _region_ssim(p, gt[rs, cs])
    return acc / (h * w)


def s_measure(q, y, alpha: float = 0.5) -> float:
    """Structure measure: object-aware and region-aware similarity, clamped to [0, 1]."""
    q, y = _pair(q, y)
    fg = y.mean()
    if fg == 0:
        score = 1.0 - q.mean()
    elif fg == 1:
        score = q.mean()
    else:
        score = alpha * _s_object(q, y) + (1 - alpha) * _s_region(q, y)
    return float(min(1.0, max(0.0, score)))


# ------------------------------------------------------- confusion based

def confusion(q, y, t: float = 0.5) -> ConfusionCounts:
    q, y = _pair(q, y)
    b = q >= t
    tp = int(np.count_nonzero(b & y))
    fp = int(np.count_nonzero(b & ~y))
    fn = int(np.count_nonzero(~b & y))
    tn = int(q.size - tp - fp - fn)
    return ConfusionCounts(tp, fp, tn, fn)


def dice(q, y, t: float = 0.5) -> float:
    c = confusion(q, y, t)
    den = 2 * c.tp + c.fp + c.fn
    return 1.0 if den == 0 else 2 * c.tp / den


def iou(q, y, t: float = 0.5) -> float:
    c = confusion(q, y, t)
    den = c.tp + c.fp + c.fn
    return 1.0 if den == 0 else c.tp / den


def ber(q, y, t: float = 0.5) -> float:
    c = confusion(q, y, t)
    fnr = c.fn / (c.tp + c.fn) if c.tp + c.fn else 0.0
    fpr = c.fp / (c.tn + c.fp) if c.tn + c.fp else 0.0
    return 0.5 * (fnr + fpr)


def acc(q, y, t: float = 0.5) -> float:
    c = confusion(q, y, t)
    return (c.tp + c.tn) / c.total


# ------------------------------------------------------- reports

def evaluate_pair(q, y, t: float = 0.5) -> MetricReport:
    """All nine measures for one prediction; raises DegenerateGroundTruth on empty GT."""
    q, yb = _pair(q, y)
    _require_foreground(yb)
    return MetricReport(
        max_f=max_f(q, y),
        weighted_f=weighted_f(q, y),
        e_measure=e_measure(q, y),
        s_measure=s_measure(q, y),
        mae=mae(q, y),
        dice=dice(q, y, t),
        iou=iou(q, y, t),
        ber=ber(q, y, t),
        acc=acc(q, y, t),
    )


def _try_pair(args):
    q, y, t = args
    try:
        return evaluate_pair(q, y, t)
    except DegenerateGroundTruth:
        return None


def average_reports(reports, n_excluded: int = 0) -> MetricReport:
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to average")
    means = {}
    for f in METRIC_NAMES:
        # fixed summation order keeps the result independent of worker scheduling
        means[f] = math.fsum(getattr(r, f) for r in reports) / len(reports)
    return MetricReport(**means, n_images=len(reports), n_excluded=n_excluded)


def evaluate_dataset(pairs, t: float = 0.5, jobs: int = 1) -> MetricReport:
    """Per-image scores averaged arithmetically; pairs with empty GT are excluded and counted."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("evaluate_dataset needs at least one pair")
    work = [(q, y, t) for q, y in pairs]
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(_try_pair, work))
    else:
        results = [_try_pair(w) for w in work]
    kept = [r for r in results if r is not None]
    if not kept:
        raise DegenerateGroundTruth("every pair has an empty ground truth")
    return average_reports(kept, n_excluded=len(results) - len(kept))


REPORT_FIELDS = [f.name for f in fields(MetricReport)]
