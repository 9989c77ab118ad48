"""Dense 2-D maps, PNG I/O and resampling.

Maps are plain numpy arrays validated on construction and returned read-only:

* image        -- ``(H, W, 3)`` float32 in [0, 1]
* logits       -- ``(H, W)`` float64, finite
* probability  -- ``(H, W)`` float64 in [0, 1]
* mask         -- ``(H, W)`` uint8 in {0, 1}
* trimap       -- ``(H, W)`` uint8 in {0, 128, 255}
"""
from __future__ import annotations

import os
from pathlib import Path

import cv2
import numpy as np

TRIMAP_VALUES = (0, 128, 255)
MASK_THRESHOLD = 128 / 255


class ImageIOError(OSError):
    """Raised when a map cannot be read or written; carries the path."""

    def __init__(self, path, cause: str):
        self.path = str(path)
        self.cause = cause
        super().__init__(f"{self.path}: {cause}")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


def _check_2d(arr: np.ndarray, kind: str) -> None:
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{kind} must be a non-empty 2-D array, got shape {arr.shape}")


def as_image(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float32)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"image must have shape (H, W, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains NaN or Inf")
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError("image values must lie in [0, 1]")
    return _frozen(arr)


def as_logits(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    _check_2d(arr, "logit map")
    if not np.all(np.isfinite(arr)):
        raise ValueError("logit map contains NaN or Inf")
    return _frozen(arr)


def as_prob(data) -> np.ndarray:
    arr = np.array(data, dtype=np.float64)
    _check_2d(arr, "probability map")
    if not np.all(np.isfinite(arr)):
        raise ValueError("probability map contains NaN or Inf")
    if arr.min() < 0 or arr.max() > 1:
        raise ValueError("probability values must lie in [0, 1]")
    return _frozen(arr)


def as_mask(data) -> np.ndarray:
    raw = np.asarray(data)
    _check_2d(raw, "mask")
    if raw.dtype.kind == "f" and not np.all(np.isfinite(raw)):
        raise ValueError("mask contains NaN or Inf")
    if not np.all((raw == 0) | (raw == 1)):
        raise ValueError("mask values must be exactly 0 or 1")
    return _frozen(raw.astype(np.uint8))


def as_trimap(data) -> np.ndarray:
    raw = np.asarray(data)
    _check_2d(raw, "trimap")
    if raw.dtype.kind == "f" and not np.all(np.isfinite(raw)):
        raise ValueError("trimap contains NaN or Inf")
    if not np.all(np.isin(raw, TRIMAP_VALUES)):
        raise ValueError("trimap values must be in {0, 128, 255}")
    return _frozen(raw.astype(np.uint8))


def sigmoid_map(p) -> np.ndarray:
    """Elementwise logistic function, overflow-free for any finite logit."""
    x = as_logits(p)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _frozen(out)


# ---------------------------------------------------------------- PNG I/O

def _read_raw(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise ImageIOError(path, "file does not exist")
    buf = np.fromfile(str(path), dtype=np.uint8)
    if buf.size == 0:
        raise ImageIOError(path, "file is empty")
    raw = cv2.imdecode(buf, cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageIOError(path, "malformed or undecodable image data")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageIOError(path, f"unsupported bit depth ({raw.dtype})")
    arr = raw.astype(np.float64) / scale
    if arr.ndim == 3:
        if arr.shape[2] == 4:
            arr = arr[:, :, :3]
        elif arr.shape[2] == 2:  # gray + alpha
            arr = arr[:, :, :1]
        if arr.shape[2] == 3:
            arr = arr[:, :, ::-1]  # BGR -> RGB
    return arr


def _single_channel(arr: np.ndarray, path) -> np.ndarray:
    if arr.ndim == 2:
        return arr
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    if not (np.array_equal(arr[:, :, 0], arr[:, :, 1]) and np.array_equal(arr[:, :, 0], arr[:, :, 2])):
        raise ImageIOError(path, "multi-channel map with unequal channels")
    return arr[:, :, 0]


def load_image(path) -> np.ndarray:
    arr = _read_raw(path)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    return as_image(arr)


def load_gray(path) -> np.ndarray:
    """Single-channel map scaled to [0, 1] (8-bit: byte/255, 16-bit: word/65535)."""
    return as_prob(_single_channel(_read_raw(path), path))


def load_mask(path) -> np.ndarray:
    gray = load_gray(path)
    # compare in byte space so 128/255 is not subject to rounding
    return as_mask((np.rint(gray * 255.0) >= 128).astype(np.uint8))


def load_trimap(path) -> np.ndarray:
    raw = _read_raw(path)
    gray = _single_channel(raw, path)
    try:
        return as_trimap(np.rint(gray * 255.0).astype(np.uint8))
    except ValueError as exc:
        raise ImageIOError(path, str(exc)) from None


def _write_png(arr: np.ndarray, path) -> None:
    path = Path(path)
    ok, buf = cv2.imencode(".png", arr)
    if not ok:
        raise ImageIOError(path, "PNG encoding failed")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(buf.tobytes())
    except OSError as exc:
        raise ImageIOError(path, exc.strerror or str(exc)) from None


def save_trimap(t, path) -> None:
    _write_png(np.asarray(as_trimap(t)), path)


def save_mask(m, path) -> None:
    _write_png(np.asarray(as_mask(m)) * np.uint8(255), path)


def save_prob(q, path, bits: int = 8) -> None:
    q = as_prob(q)
    if bits == 8:
        _write_png(np.rint(q * 255.0).astype(np.uint8), path)
    elif bits == 16:
        _write_png(np.rint(q * 65535.0).astype(np.uint16), path)
    else:
        raise ValueError("bits must be 8 or 16")


def save_image(img, path) -> None:
    img = as_image(img)
    _write_png(np.rint(img[:, :, ::-1] * 255.0).astype(np.uint8), path)


# ------------------------------------------------------------- resampling

def _check_target(h: int, w: int) -> None:
    if h < 1 or w < 1:
        raise ValueError(f"target size must be at least 1x1, got {h}x{w}")


def _bilinear_axis(n_in: int, n_out: int):
    # pixel-centre convention (align_corners=False), clamped at the borders
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def resize_bilinear(img, h: int, w: int) -> np.ndarray:
    """Bilinear resize of an image ``(H, W, 3)`` or probability map ``(H, W)``."""
    _check_target(h, w)
    arr = np.asarray(img)
    is_image = arr.ndim == 3
    arr = as_image(arr) if is_image else as_prob(arr)
    if arr.shape[:2] == (h, w):
        return arr
    src = arr.astype(np.float64)
    y0, y1, fy = _bilinear_axis(arr.shape[0], h)
    x0, x1, fx = _bilinear_axis(arr.shape[1], w)
    if is_image:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = np.clip(top * (1 - fy) + bot * fy, 0.0, 1.0)
    return as_image(out) if is_image else as_prob(out)


def resize_nearest(m, h: int, w: int) -> np.ndarray:
    """Nearest-neighbour resize of a mask or trimap; keeps the value alphabet."""
    _check_target(h, w)
    arr = np.asarray(m)
    _check_2d(arr, "map")
    if arr.shape == (h, w):
        return _frozen(arr.copy())
    ys = np.minimum(((np.arange(h) + 0.5) * arr.shape[0] / h).astype(np.intp), arr.shape[0] - 1)
    xs = np.minimum(((np.arange(w) + 0.5) * arr.shape[1] / w).astype(np.intp), arr.shape[1] - 1)
    return _frozen(arr[ys][:, xs])


def list_pngs(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ImageIOError(directory, "not a directory")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() == ".png" and p.is_file())


def stem_of(path) -> str:
    return os.path.splitext(os.path.basename(str(path)))[0]
