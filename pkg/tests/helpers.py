"""Shared oracles and fixtures-as-functions for the test suite."""
import math

import numpy as np

from cgm.imagecore import sigmoid_map


def exact_preimage(t: float, search: int = 4000):
    """A float64 logit whose computed sigmoid is bit-equal to ``t``, or None."""
    p = math.log(t / (1 - t))
    lo = hi = p
    cands = [p]
    for _ in range(search):
        lo, hi = np.nextafter(lo, -np.inf), np.nextafter(hi, np.inf)
        cands += [lo, hi]
    arr = np.array(cands)
    hit = arr[sigmoid_map(arr[None])[0] == t]
    return float(hit[0]) if hit.size else None


def central_fd(f, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x`` (float64)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def random_mask(rng, h, w, p=0.5, nonempty=True):
    while True:
        y = (rng.random((h, w)) < p).astype(np.uint8)
        if not nonempty or (y.any() and not y.all()):
            return y


def half_plane(n=32):
    y = np.zeros((n, n), np.uint8)
    y[:, n // 2:] = 1
    return y
