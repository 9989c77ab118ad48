"""Image/GT pair discovery in the ``<root>/im``, ``<root>/gt`` layout and seeded synthetic shapes."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .imagecore import as_image, as_mask, save_image, save_mask

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
FAMILIES = ("disks", "polygons", "rings", "stars")
MIN_FG, MAX_FG = 0.02, 0.98


class DatasetError(OSError):
    pass


@dataclass(frozen=True)
class PairManifest:
    root: Path
    entries: tuple  # (image path, gt path, id), sorted by id
    unmatched: tuple = ()

    def __len__(self):
        return len(self.entries)

    def ids(self) -> list[str]:
        return [e[2] for e in self.entries]


def _by_stem(directory: Path, suffixes) -> dict:
    found = {}
    for p in directory.iterdir():
        if p.is_file() and p.suffix.lower() in suffixes:
            # first suffix in preference order wins for duplicate stems
            prev = found.get(p.stem)
            if prev is None or suffixes.index(p.suffix.lower()) < suffixes.index(prev.suffix.lower()):
                found[p.stem] = p
    return found


def scan_pairs(root) -> PairManifest:
    root = Path(root)
    im_dir, gt_dir = root / "im", root / "gt"
    for d in (im_dir, gt_dir):
        if not d.is_dir():
            raise DatasetError(f"{d}: missing directory (expected <root>/im and <root>/gt)")
    images = _by_stem(im_dir, IMAGE_SUFFIXES)
    gts = _by_stem(gt_dir, (".png",))
    common = sorted(set(images) & set(gts))
    unmatched = sorted([str(images[s]) for s in set(images) - set(gts)]
                       + [str(gts[s]) for s in set(gts) - set(images)])
    for u in unmatched:
        log.warning("unmatched file excluded: %s", u)
    if not common:
        raise DatasetError(f"{root}: no matching image/ground-truth stems")
    entries = tuple((images[s], gts[s], s) for s in common)
    return PairManifest(root, entries, tuple(unmatched))


# ------------------------------------------------------------- synthesis

@dataclass(frozen=True)
class SynthSpec:
    seed: int = 0
    count: int = 8
    size: int = 64
    family: str = "mixed"  # one of FAMILIES or "mixed" (round-robin)
    bg_noise: float = 0.1
    fg_noise: float = 0.1

    def __post_init__(self):
        if self.size < 32:
            raise ValueError("synthetic size must be at least 32")
        if self.count < 1:
            raise ValueError("count must be at least 1")
        if self.family not in FAMILIES + ("mixed",):
            raise ValueError(f"unknown shape family {self.family!r}")
        if not (0 <= self.bg_noise <= 0.15 and 0 <= self.fg_noise <= 0.15):
            raise ValueError("noise amplitudes must lie in [0, 0.15]")


def _disks(rng, s):
    yy, xx = np.mgrid[0:s, 0:s] + 0.5
    m = np.zeros((s, s), bool)
    placed = []
    for _ in range(rng.integers(1, 4)):
        r = rng.uniform(0.1, 0.25) * s
        cy, cx = rng.uniform(r, s - r, size=2)
        # keep disks apart so every connected component is a single disk
        if any(np.hypot(cy - py, cx - px) <= r + pr + 2 for py, px, pr in placed):
            continue
        placed.append((cy, cx, r))
        m |= (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    return m


def _polygon(rng, s):
    n = int(rng.integers(5, 9))
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    rad = rng.uniform(0.15, 0.4, n) * s
    c = rng.uniform(0.4, 0.6, 2) * s
    pts = np.stack([c[0] + rad * np.cos(ang), c[1] + rad * np.sin(ang)], axis=1)
    m = np.zeros((s, s), np.uint8)
    cv2.fillPoly(m, [np.round(pts).astype(np.int32)], 1)
    return m.astype(bool)


def _ring(rng, s):
    yy, xx = np.mgrid[0:s, 0:s] + 0.5
    r_out = rng.uniform(0.2, 0.4) * s
    r_in = r_out * rng.uniform(0.4, 0.75)
    cy, cx = rng.uniform(r_out, s - r_out, size=2)
    d2 = (yy - cy) ** 2 + (xx - cx) ** 2
    return (d2 <= r_out ** 2) & (d2 > r_in ** 2)


def _star(rng, s):
    """Hub with thin spokes 1-3 px wide."""
    m = np.zeros((s, s), np.uint8)
    c = rng.uniform(0.35, 0.65, 2) * s
    hub = max(2, int(round(0.06 * s)))
    cv2.circle(m, (int(round(c[0])), int(round(c[1]))), hub, 1, thickness=-1)
    n = int(rng.integers(5, 9))
    for a in rng.uniform(0, 2 * np.pi, n):
        length = rng.uniform(0.3, 0.45) * s
        end = (int(round(c[0] + length * np.cos(a))), int(round(c[1] + length * np.sin(a))))
        cv2.line(m, (int(round(c[0])), int(round(c[1]))), end, 1, thickness=int(rng.integers(1, 4)))
    return m.astype(bool)


_SHAPERS = {"disks": _disks, "polygons": _polygon, "rings": _ring, "stars": _star}


def _colors(rng):
    while True:
        bg = rng.uniform(0.05, 0.95, 3)
        fg = rng.uniform(0.05, 0.95, 3)
        if np.abs(fg - bg).mean() >= 0.3:
            return bg, fg


def generate_synthetic(spec: SynthSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    """Seeded (image, mask) pairs; a pure function of ``spec``."""
    rng = np.random.default_rng(spec.seed)
    s = spec.size
    out = []
    for i in range(spec.count):
        family = FAMILIES[i % len(FAMILIES)] if spec.family == "mixed" else spec.family
        while True:
            m = _SHAPERS[family](rng, s)
            if MIN_FG <= m.mean() <= MAX_FG:
                break
        bg, fg = _colors(rng)
        noise_bg = rng.uniform(-spec.bg_noise, spec.bg_noise, (s, s, 3))
        noise_fg = rng.uniform(-spec.fg_noise, spec.fg_noise, (s, s, 3))
        img = np.where(m[:, :, None], fg + noise_fg, bg + noise_bg)
        out.append((as_image(np.clip(img, 0.0, 1.0)), as_mask(m.astype(np.uint8))))
    return out


def write_pairs(pairs, root, prefix: str = "synth") -> PairManifest:
    """Write (image, mask) pairs to ``root/im`` and ``root/gt`` as PNGs."""
    root = Path(root)
    for i, (img, mask) in enumerate(pairs):
        save_image(img, root / "im" / f"{prefix}_{i:04d}.png")
        save_mask(mask, root / "gt" / f"{prefix}_{i:04d}.png")
    return scan_pairs(root)


def boundary_distance(mask) -> np.ndarray:
    """Euclidean distance of every pixel to the nearest pixel of the other class."""
    from scipy.ndimage import distance_transform_edt

    m = np.asarray(as_mask(mask), bool)
    return np.where(m, distance_transform_edt(m), distance_transform_edt(~m))


def band_noise(prob, mask, rng, width: float = 3.0, amplitude: float = 0.45) -> np.ndarray:
    """Add uniform noise to a probability map within ``width`` px of the GT boundary."""
    q = np.asarray(prob, np.float64)
    band = boundary_distance(mask) <= width
    noisy = q + rng.uniform(-amplitude, amplitude, q.shape)
    return np.clip(np.where(band, noisy, q), 0.0, 1.0)
