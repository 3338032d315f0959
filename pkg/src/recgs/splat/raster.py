"""Rendering entry points and backend selection.

The compiled kernels are used when importable; set ``RECGS_BACKEND=python``
to force the numpy fallback.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..core import SCALE_FLOOR, Camera, GaussianCloud
from . import _kernels_py
from .projection import Projection, project_arrays, project_backward

TILE = 16
CUTOFF = 9.0          # 3 sigma, squared Mahalanobis distance
T_MIN = 1e-4

try:
    from . import _kernels as _compiled
except ImportError:   # pragma: no cover - depends on the build
    _compiled = None

_BACKENDS = {"python": _kernels_py}
if _compiled is not None:
    _BACKENDS["compiled"] = _compiled


def available_backends() -> list[str]:
    return list(_BACKENDS)


def _default_backend() -> str:
    choice = os.environ.get("RECGS_BACKEND", "").strip().lower()
    if choice:
        if choice not in _BACKENDS:
            raise ImportError(f"RECGS_BACKEND={choice!r} not available; have {available_backends()}")
        return choice
    return "compiled" if "compiled" in _BACKENDS else "python"


BACKEND = _default_backend()


def _kernels(backend):
    return _BACKENDS[backend or BACKEND]


def blur(img, window, backend: str | None = None) -> np.ndarray:
    """Zero-padded separable correlation of an (H, W, C) array."""
    return _kernels(backend).blur_same(np.ascontiguousarray(img, dtype=np.float64),
                                       np.ascontiguousarray(window, dtype=np.float64))


def ssim_kernel(A, B, mu_a, sq_a, window, c1, c2, grad_a, backend: str | None = None):
    return _kernels(backend).ssim_grad(A, B, mu_a, sq_a, np.ascontiguousarray(window, dtype=np.float64),
                                       c1, c2, grad_a)


def bin_tiles(means, covs, width, height, tile=TILE, cutoff=CUTOFF):
    """Per-tile lists of projected Gaussians, preserving depth order.

    Returns ``(tile_start, tile_ids)`` in CSR layout over row-major tiles.
    """
    ntx = (width + tile - 1) // tile
    nty = (height + tile - 1) // tile
    k = np.sqrt(cutoff)
    rx = k * np.sqrt(covs[:, 0, 0])
    ry = k * np.sqrt(covs[:, 1, 1])
    x0 = np.clip(np.ceil(means[:, 0] - rx), 0, None)
    x1 = np.clip(np.floor(means[:, 0] + rx), None, width - 1)
    y0 = np.clip(np.ceil(means[:, 1] - ry), 0, None)
    y1 = np.clip(np.floor(means[:, 1] + ry), None, height - 1)
    ok = (x0 <= x1) & (y0 <= y1)
    g = np.flatnonzero(ok)
    tx0 = (x0[g] // tile).astype(np.int64)
    tx1 = (x1[g] // tile).astype(np.int64)
    ty0 = (y0[g] // tile).astype(np.int64)
    ty1 = (y1[g] // tile).astype(np.int64)
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    counts = nx * ny
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(g)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    tiles = (ty0[owner] + local // nx[owner]) * ntx + tx0[owner] + local % nx[owner]
    order = np.argsort(tiles, kind="stable")
    tile_ids = g[owner[order]].astype(np.int64)
    tile_start = np.zeros(ntx * nty + 1, dtype=np.int64)
    np.cumsum(np.bincount(tiles, minlength=ntx * nty), out=tile_start[1:])
    return tile_start, np.ascontiguousarray(tile_ids)


@dataclass
class RenderContext:
    proj: Projection
    tile_start: np.ndarray
    tile_ids: np.ndarray
    opac: np.ndarray
    colors: np.ndarray
    width: int
    height: int
    transmittance: np.ndarray
    n_gaussians: int
    backend: str
    records: object = None


def rasterize(positions, scales, rotations, opacities, colors, camera: Camera, width: int, height: int,
              backend: str | None = None):
    """Render natural-parameter arrays; returns ``(image, context)``."""
    if width <= 0 or height <= 0:
        raise ValueError(f"image size must be positive, got {width}x{height}")
    backend = backend or BACKEND
    proj = project_arrays(positions, scales, rotations, camera)
    opac = np.ascontiguousarray(opacities[proj.index], dtype=np.float64)
    cols = np.ascontiguousarray(colors[proj.index], dtype=np.float64)
    tile_start, tile_ids = bin_tiles(proj.means, proj.covs, width, height)
    img, trans, records = _kernels(backend).render_forward(
        height, width, TILE, tile_start, tile_ids, np.ascontiguousarray(proj.means),
        np.ascontiguousarray(proj.conics), opac, cols, CUTOFF, T_MIN)
    ctx = RenderContext(proj, tile_start, tile_ids, opac, cols, width, height, trans,
                        len(positions), backend, records)
    return img, ctx


def rasterize_backward(ctx: RenderContext, grad_output) -> dict[str, np.ndarray]:
    """Gradients of ``<grad_output, image>`` w.r.t. natural parameters.

    Keys: ``positions``, ``scales``, ``rotations``, ``opacities``, ``colors``.
    """
    grad_output = np.ascontiguousarray(grad_output, dtype=np.float64)
    if grad_output.shape != (ctx.height, ctx.width, 3):
        raise ValueError(f"grad_output shape {grad_output.shape} does not match "
                         f"render output {(ctx.height, ctx.width, 3)}")
    pr = ctx.proj
    g_means, g_conics, g_opac, g_cols = _kernels(ctx.backend).render_backward(
        ctx.height, ctx.width, TILE, ctx.tile_start, ctx.tile_ids, np.ascontiguousarray(pr.means),
        np.ascontiguousarray(pr.conics), ctx.opac, ctx.colors, grad_output, ctx.records, CUTOFF, T_MIN)
    g_pos, g_scale, g_rot = project_backward(pr, g_means, g_conics)
    n = ctx.n_gaussians
    out = dict(positions=np.zeros((n, 3)), scales=np.zeros((n, 3)), rotations=np.zeros((n, 4)),
               opacities=np.zeros(n), colors=np.zeros((n, 3)))
    out["positions"][pr.index] = g_pos
    out["scales"][pr.index] = g_scale
    out["rotations"][pr.index] = g_rot
    out["opacities"][pr.index] = g_opac
    out["colors"][pr.index] = g_cols
    return out


def render(cloud: GaussianCloud, camera: Camera, width: int, height: int, backend: str | None = None) -> np.ndarray:
    """Alpha-composite ``cloud`` as seen by ``camera`` into an (H, W, 3) image.

    Values are not clamped; callers clamp when exporting.
    """
    if len(cloud) == 0:
        raise ValueError("cannot render an empty cloud")
    img, _ = rasterize(cloud.positions, cloud.scales, cloud.rotations, cloud.opacities, cloud.colors,
                       camera, width, height, backend)
    return img


def coverage(cloud: GaussianCloud, camera: Camera, width: int, height: int) -> np.ndarray:
    """Accumulated compositing weight per pixel, ``1 - T``."""
    _, ctx = rasterize(cloud.positions, cloud.scales, cloud.rotations, cloud.opacities, cloud.colors,
                       camera, width, height)
    return 1.0 - ctx.transmittance


def to_raw_gradients(cloud: GaussianCloud, grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Map natural-parameter gradients to the optimizer's raw parameters.

    scale = floor + exp(scale_raw), opacity = sigmoid(opacity_raw); position,
    quaternion and color are their own raw values.
    """
    o = cloud.opacities
    return dict(positions=grads["positions"],
                scale_raw=grads["scales"] * (cloud.scales - SCALE_FLOOR),
                rotations=grads["rotations"],
                opacity_raw=grads["opacities"] * o * (1.0 - o),
                colors=grads["colors"])


def render_backward(cloud: GaussianCloud, camera: Camera, grad_output, backend: str | None = None) -> dict[str, np.ndarray]:
    """Exact gradients of ``<grad_output, render(cloud, camera)>`` in raw space.

    Keys: ``positions``, ``scale_raw``, ``rotations``, ``opacity_raw``,
    ``colors``; each has one row per Gaussian in the cloud.
    """
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.ndim != 3 or grad_output.shape[2] != 3:
        raise ValueError(f"grad_output must be (H, W, 3), got {grad_output.shape}")
    h, w = grad_output.shape[:2]
    if camera.width is not None and (w, h) != (camera.width, camera.height):
        raise ValueError(f"grad_output is {w}x{h} but the camera renders {camera.width}x{camera.height}")
    _, ctx = rasterize(cloud.positions, cloud.scales, cloud.rotations, cloud.opacities, cloud.colors,
                       camera, w, h, backend)
    return to_raw_gradients(cloud, rasterize_backward(ctx, grad_output))
