"""Base prediction -> confidence trimap -> refiner -> final map."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter

from .imagecore import as_image, as_logits, as_prob, as_trimap, save_prob, save_trimap, sigmoid_map
from .nets import ToyNet, image_batch, refiner_batch
from .trimap import BACKGROUND, DEFAULT_THRESHOLDS, FOREGROUND, UNKNOWN, ThresholdPair, trimap_from_prob

GUIDE_RADIUS = 8
GUIDE_EPS = 1e-4


class CompositePolicy(str, enum.Enum):
    REFINER_FULL = "refiner-full"
    BAND_ONLY = "band-only"


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage} stage failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineResult:
    base_prob: np.ndarray
    trimap: np.ndarray
    refined_prob: np.ndarray
    final_prob: np.ndarray
    thresholds: ThresholdPair = DEFAULT_THRESHOLDS
    policy: CompositePolicy = CompositePolicy.BAND_ONLY

    def save(self, out_dir, stem: str, bits: int = 8) -> dict:
        """Four PNGs plus a JSON sidecar with thresholds and policy."""
        out_dir = Path(out_dir)
        files = {
            "base_prob": f"{stem}_base.png",
            "trimap": f"{stem}_trimap.png",
            "refined_prob": f"{stem}_refined.png",
            "final_prob": f"{stem}_final.png",
        }
        save_prob(self.base_prob, out_dir / files["base_prob"], bits)
        save_trimap(self.trimap, out_dir / files["trimap"])
        save_prob(self.refined_prob, out_dir / files["refined_prob"], bits)
        save_prob(self.final_prob, out_dir / files["final_prob"], bits)
        sidecar = {
            "t_low": self.thresholds.t_low,
            "t_high": self.thresholds.t_high,
            "policy": CompositePolicy(self.policy).value,
            "files": files,
        }
        (out_dir / f"{stem}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
        return sidecar


def _box_mean(x: np.ndarray, r: int) -> np.ndarray:
    """Mean over the (2r+1)^2 window clipped to the image; trailing axes are channels."""
    size = (2 * r + 1, 2 * r + 1) + (1,) * (x.ndim - 2)
    ones = uniform_filter(np.ones(x.shape[:2]), size=size[:2], mode="constant")
    return uniform_filter(x, size=size, mode="constant") / ones.reshape(ones.shape + (1,) * (x.ndim - 2))


def guided_filter(guide: np.ndarray, p: np.ndarray, r: int = GUIDE_RADIUS, eps: float = GUIDE_EPS) -> np.ndarray:
    """Colour guided filter: locally affine in the RGB guide."""
    I = np.asarray(guide, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    mean_i = _box_mean(I, r)
    mean_p = _box_mean(p, r)
    cov_ip = _box_mean(I * p[..., None], r) - mean_i * mean_p[..., None]
    var = _box_mean(I[..., :, None] * I[..., None, :], r) - mean_i[..., :, None] * mean_i[..., None, :]
    var += eps * np.eye(3)
    a = np.linalg.solve(var, cov_ip[..., None])[..., 0]
    b = mean_p - (a * mean_i).sum(axis=-1)
    return (_box_mean(a, r) * I).sum(axis=-1) + _box_mean(b, r)


def heuristic_refiner(img, trimap, base_prob) -> np.ndarray:
    """Deterministic stand-in for a learned refiner.

    Confident pixels become hard 0/1 labels; the unknown band takes the
    guided-filter output of the labels (unknown pixels seeded with the base
    probability), with the image as guide.
    """
    img = as_image(img)
    t = as_trimap(trimap)
    q = as_prob(base_prob)
    if t.shape != q.shape or img.shape[:2] != q.shape:
        raise ValueError("image, trimap and base probability must share dimensions")
    labels = np.where(t == FOREGROUND, 1.0, np.where(t == BACKGROUND, 0.0, q))
    unknown = t == UNKNOWN
    if not unknown.any():
        return as_prob(labels)
    smoothed = np.clip(guided_filter(img, labels), 0.0, 1.0)
    return as_prob(np.where(unknown, smoothed, labels))


def composite(base_prob, refined_prob, trimap, policy=CompositePolicy.BAND_ONLY) -> np.ndarray:
    q = as_prob(base_prob)
    r = as_prob(refined_prob)
    t = as_trimap(trimap)
    if not (q.shape == r.shape == t.shape):
        raise ValueError(f"shape mismatch: {q.shape}, {r.shape}, {t.shape}")
    policy = CompositePolicy(policy)
    if policy is CompositePolicy.REFINER_FULL:
        return r
    return as_prob(np.where(t == FOREGROUND, 1.0, np.where(t == BACKGROUND, 0.0, r)))


def _base_logits(img, base) -> np.ndarray:
    if isinstance(base, ToyNet):
        return base.predict(image_batch([img]))[0]
    if callable(base):
        return as_logits(base(img))
    return as_logits(base)


def _refine(img, trimap, base_prob, refiner) -> np.ndarray:
    if refiner is None or (isinstance(refiner, str) and refiner == "heuristic"):
        return heuristic_refiner(img, trimap, base_prob)
    if isinstance(refiner, ToyNet):
        return sigmoid_map(refiner.predict(refiner_batch([img], [trimap]))[0])
    if callable(refiner):
        return as_prob(refiner(img, trimap, base_prob))
    raise TypeError(f"unsupported refiner {refiner!r}")


def refine_from_prob(img, base_prob, refiner="heuristic", th: ThresholdPair = DEFAULT_THRESHOLDS,
                     policy=CompositePolicy.BAND_ONLY) -> PipelineResult:
    """Trimap, refinement and compositing for an already computed base probability map."""
    img = as_image(img)
    base_prob = as_prob(base_prob)
    if base_prob.shape != img.shape[:2]:
        raise PipelineError("base", ValueError(f"prediction {base_prob.shape} vs image {img.shape[:2]}"))
    try:
        trimap = trimap_from_prob(base_prob, th)
    except Exception as exc:
        raise PipelineError("trimap", exc) from exc
    try:
        refined = _refine(img, trimap, base_prob, refiner)
    except Exception as exc:
        raise PipelineError("refiner", exc) from exc
    if refined.shape != base_prob.shape:
        raise PipelineError("refiner", ValueError(f"refiner output {refined.shape} vs {base_prob.shape}"))
    final = composite(base_prob, refined, trimap, policy)
    return PipelineResult(base_prob, trimap, refined, final, th, CompositePolicy(policy))


def run_pipeline(img, base, refiner="heuristic", th: ThresholdPair = DEFAULT_THRESHOLDS,
                 policy=CompositePolicy.BAND_ONLY) -> PipelineResult:
    """Image -> base logits -> sigmoid -> trimap -> refiner -> composite."""
    img = as_image(img)
    try:
        logits = _base_logits(img, base)
    except Exception as exc:
        raise PipelineError("base", exc) from exc
    return refine_from_prob(img, sigmoid_map(logits), refiner, th, policy)
