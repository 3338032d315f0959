"""Motion-compensated temporal median filtering.

Classic caustic removal for a flat seafloor: every frame in a sliding
window is warped into the reference view through the homography induced by
the known scene plane, and the per-pixel median of the stack is taken as
the caustic-free image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import map_coordinates

from .core import Camera, as_image


@dataclass(frozen=True)
class Plane:
    """World plane ``normal . X = offset``."""
    normal: tuple = (0.0, 0.0, 1.0)
    offset: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if n.shape != (3,) or not np.all(np.isfinite(n)) or np.linalg.norm(n) == 0:
            raise ValueError("plane normal must be a finite non-zero 3-vector")


@dataclass
class FilterResult:
    clean: list[np.ndarray]
    caustic: list[np.ndarray]
    flagged: list[np.ndarray]   # (H, W) bool: too few valid samples, copied from input
    window: int


def _intrinsics(cam: Camera) -> np.ndarray:
    return np.array([[cam.fx, 0.0, cam.cx], [0.0, cam.fy, cam.cy], [0.0, 0.0, 1.0]])


def plane_homography(ref: Camera, src: Camera, plane: Plane) -> np.ndarray:
    """3x3 map from pixels of ``ref`` to pixels of ``src`` through ``plane``."""
    n = np.asarray(plane.normal, dtype=np.float64)
    scale = np.linalg.norm(n)
    n, d = n / scale, plane.offset / scale
    R1, t1 = ref.R, ref.t
    R2, t2 = src.R, src.t
    # plane in ref camera coordinates: n_c . X_c = d_c
    n_c = R1 @ n
    d_c = d + n_c @ t1
    if abs(d_c) < 1e-12:
        raise ValueError("reference camera center lies on the plane")
    R = R2 @ R1.T
    t = t2 - R @ t1
    H = _intrinsics(src) @ (R + np.outer(t, n_c) / d_c) @ np.linalg.inv(_intrinsics(ref))
    return H / H[2, 2] if abs(H[2, 2]) > 1e-300 else H


def warp(image, H: np.ndarray, width: int, height: int) -> np.ndarray:
    """Bilinear pull-warp: output pixel p samples ``image`` at H p.

    Samples outside the source image are NaN.
    """
    image = as_image(image)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    pts = H @ np.stack([xs.ravel(), ys.ravel(), np.ones(xs.size)])
    with np.errstate(divide="ignore", invalid="ignore"):
        u = pts[0] / pts[2]
        v = pts[1] / pts[2]
    sh, sw = image.shape[:2]
    valid = (pts[2] > 0) & (u >= 0) & (u <= sw - 1) & (v >= 0) & (v <= sh - 1)
    u = np.where(valid, u, 0.0)
    v = np.where(valid, v, 0.0)
    out = np.empty((height * width, 3))
    for ch in range(3):
        out[:, ch] = map_coordinates(image[:, :, ch], [v, u], order=1, mode="nearest")
    out[~valid] = np.nan
    return out.reshape(height, width, 3)


def _window_range(t: int, n: int, window: int) -> range:
    # centered window, shifted to stay inside the sequence
    lo = t - window // 2
    lo = max(0, min(lo, n - window))
    return range(lo, min(n, lo + window))


def filter_sequence(frames, plane: Plane | None = Plane(), window: int = 7) -> FilterResult:
    """Per-frame (clean, caustic) split by motion-compensated temporal median."""
    frames = [(cam, as_image(img)) for cam, img in frames]
    if not frames:
        raise ValueError("need at least one frame")
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd integer, got {window}")
    if plane is None:
        raise ValueError("the scene plane is required for motion compensation")
    need = -(-window // 2)
    clean, caustic, flagged = [], [], []
    for t, (cam_t, img_t) in enumerate(frames):
        if window == 1:
            clean.append(img_t.copy())
            caustic.append(np.zeros_like(img_t))
            flagged.append(np.zeros(img_t.shape[:2], dtype=bool))
            continue
        h, w = img_t.shape[:2]
        stack = []
        for j in _window_range(t, len(frames), window):
            cam_j, img_j = frames[j]
            if j == t:
                stack.append(img_t)
            else:
                stack.append(warp(img_j, plane_homography(cam_t, cam_j, plane), w, h))
        stack = np.stack(stack)
        count = np.sum(np.all(np.isfinite(stack), axis=3), axis=0)
        bad = count < need
        med = np.nanmedian(stack, axis=0)
        med[bad] = img_t[bad]
        clean.append(med)
        caustic.append(img_t - med)
        flagged.append(bad)
    return FilterResult(clean, caustic, flagged, window)
