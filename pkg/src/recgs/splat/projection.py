"""Pinhole projection of 3D Gaussians to screen-space ellipses, and its adjoint."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import Camera, GaussianCloud, quat_to_rotmat

NEAR_CLIP = 0.01
COV_FLOOR = 0.3


@dataclass(frozen=True)
class ProjectedGaussian:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    opacity: float
    color: np.ndarray
    source_index: int


@dataclass
class Projection:
    """Visible Gaussians in front-to-back order, with what backward needs."""

    index: np.ndarray      # source indices, depth-sorted
    means: np.ndarray      # (M, 2)
    covs: np.ndarray       # (M, 2, 2), floor included
    conics: np.ndarray     # (M, 3): a, b, c of the inverse covariance
    depths: np.ndarray
    # cached intermediates for the adjoint
    p_cam: np.ndarray
    J: np.ndarray
    W: np.ndarray
    M: np.ndarray          # rotation @ diag(scale)
    Rg: np.ndarray
    sigma: np.ndarray
    quat_unit: np.ndarray
    quat_norm: np.ndarray
    fx: float
    fy: float

    def __len__(self):
        return len(self.index)


def project_arrays(positions, scales, rotations, camera: Camera,
                   near_clip: float = NEAR_CLIP, cov_floor: float = COV_FLOOR) -> Projection:
    W = camera.R
    p_cam_all = positions @ W.T + camera.t
    z_all = p_cam_all[:, 2]
    src = np.flatnonzero(z_all > near_clip)
    # lexsort: last key is primary, so depth first then source index
    src = src[np.lexsort((src, z_all[src]))]

    p_cam = p_cam_all[src]
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    fx, fy = camera.fx, camera.fy
    means = np.stack([fx * x / z + camera.cx, fy * y / z + camera.cy], axis=1)

    J = np.zeros((len(src), 2, 3))
    J[:, 0, 0] = fx / z
    J[:, 0, 2] = -fx * x / (z * z)
    J[:, 1, 1] = fy / z
    J[:, 1, 2] = -fy * y / (z * z)

    q = rotations[src]
    qn = np.linalg.norm(q, axis=1)
    qu = q / qn[:, None]
    Rg = quat_to_rotmat(qu)
    M = Rg * scales[src][:, None, :]
    sigma = M @ M.transpose(0, 2, 1)
    T = J @ W
    cov = T @ sigma @ T.transpose(0, 2, 1)
    cov[:, 0, 0] += cov_floor
    cov[:, 1, 1] += cov_floor
    # symmetrize against rounding
    off = 0.5 * (cov[:, 0, 1] + cov[:, 1, 0])
    cov[:, 0, 1] = off
    cov[:, 1, 0] = off

    det = cov[:, 0, 0] * cov[:, 1, 1] - off * off
    conics = np.stack([cov[:, 1, 1] / det, -off / det, cov[:, 0, 0] / det], axis=1)
    return Projection(src, means, cov, conics, z.copy(), p_cam, J, W, M, Rg, sigma, qu, qn, fx, fy)


def project(cloud: GaussianCloud, camera: Camera) -> list[ProjectedGaussian]:
    """Visible Gaussians of ``cloud`` seen from ``camera``, nearest first.

    Ties in depth are ordered by source index.  Gaussians at or behind the
    near clip plane are dropped, so the list may be empty.
    """
    if len(cloud) == 0:
        raise ValueError("cannot project an empty cloud")
    pr = project_arrays(cloud.positions, cloud.scales, cloud.rotations, camera)
    return [ProjectedGaussian(pr.means[m], pr.covs[m], float(pr.depths[m]),
                              float(cloud.opacities[i]), cloud.colors[i], int(i))
            for m, i in enumerate(pr.index)]


def _drot_dq(q):
    """d R / d q for unit quaternions, shape (N, 3, 3, 4)."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    o = np.zeros_like(w)
    d = np.empty((len(q), 3, 3, 4))
    d[:, 0, 0] = np.stack([o, o, -4 * y, -4 * z], 1)
    d[:, 0, 1] = np.stack([-2 * z, 2 * y, 2 * x, -2 * w], 1)
    d[:, 0, 2] = np.stack([2 * y, 2 * z, 2 * w, 2 * x], 1)
    d[:, 1, 0] = np.stack([2 * z, 2 * y, 2 * x, 2 * w], 1)
    d[:, 1, 1] = np.stack([o, -4 * x, o, -4 * z], 1)
    d[:, 1, 2] = np.stack([-2 * x, -2 * w, 2 * z, 2 * y], 1)
    d[:, 2, 0] = np.stack([-2 * y, 2 * z, -2 * w, 2 * x], 1)
    d[:, 2, 1] = np.stack([2 * x, 2 * w, 2 * z, 2 * y], 1)
    d[:, 2, 2] = np.stack([o, -4 * x, -4 * y, o], 1)
    return d


def project_backward(pr: Projection, g_means, g_conics):
    """Chain screen-space gradients back to position, scale and quaternion.

    Returns gradients for the visible Gaussians only, in projection order.
    The quaternion gradient is taken with respect to the stored (possibly
    unnormalized) quaternion.
    """
    a, b, c = pr.conics[:, 0], pr.conics[:, 1], pr.conics[:, 2]
    A = np.empty((len(pr), 2, 2))
    A[:, 0, 0], A[:, 0, 1], A[:, 1, 0], A[:, 1, 1] = a, b, b, c
    G = np.empty_like(A)
    G[:, 0, 0] = g_conics[:, 0]
    G[:, 0, 1] = G[:, 1, 0] = 0.5 * g_conics[:, 1]
    G[:, 1, 1] = g_conics[:, 2]
    g_cov = -A @ G @ A

    T = pr.J @ pr.W
    g_sigma = T.transpose(0, 2, 1) @ g_cov @ T
    g_T = 2.0 * g_cov @ T @ pr.sigma
    g_J = g_T @ pr.W.T

    x, y, z = pr.p_cam[:, 0], pr.p_cam[:, 1], pr.p_cam[:, 2]
    fx, fy = pr.fx, pr.fy
    z2, z3 = z * z, z * z * z
    g_pc = np.zeros((len(pr), 3))
    g_pc[:, 0] = g_means[:, 0] * fx / z - g_J[:, 0, 2] * fx / z2
    g_pc[:, 1] = g_means[:, 1] * fy / z - g_J[:, 1, 2] * fy / z2
    g_pc[:, 2] = (-g_means[:, 0] * fx * x / z2 - g_means[:, 1] * fy * y / z2
                  - g_J[:, 0, 0] * fx / z2 + g_J[:, 0, 2] * 2 * fx * x / z3
                  - g_J[:, 1, 1] * fy / z2 + g_J[:, 1, 2] * 2 * fy * y / z3)
    g_pos = g_pc @ pr.W

    g_M = 2.0 * g_sigma @ pr.M
    g_scale = np.einsum("nik,nik->nk", pr.Rg, g_M)
    scales = np.linalg.norm(pr.M, axis=1)
    g_R = g_M * scales[:, None, :]
    g_qu = np.einsum("nij,nijk->nk", g_R, _drot_dq(pr.quat_unit))
    g_q = (g_qu - pr.quat_unit * np.sum(g_qu * pr.quat_unit, axis=1, keepdims=True)) / pr.quat_norm[:, None]
    return g_pos, g_scale, g_q
