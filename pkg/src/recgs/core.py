"""Domain types shared by every module: images, cameras, Gaussian clouds.

Images are plain ``(height, width, 3)`` float64 arrays.  Residuals are signed,
so nothing here clamps to [0, 1]; :func:`as_image` only enforces shape and
finiteness.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SCALE_FLOOR = 1e-4
DEFAULT_SEED = 0


def as_image(data, copy: bool = False) -> np.ndarray:
    """Coerce ``data`` to a float64 ``(H, W, 3)`` image, raising on bad input."""
    arr = np.array(data, dtype=np.float64, copy=copy) if copy else np.asarray(data, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"image must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"image must be non-empty, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains NaN or Inf")
    return arr


def zeros_image(width: int, height: int) -> np.ndarray:
    return np.zeros((height, width, 3), dtype=np.float64)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) quaternions in (w, x, y, z) order.

    Quaternions are normalized first.
    """
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def rotmat_to_quat(R: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0 for a single rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return -q if q[0] < 0 else q


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; ``rotation``/``translation`` map world to camera.

    Camera frame follows the usual vision convention: +z forward, +x right,
    +y down.  Pixel centers sit on integer coordinates.
    """

    frame_id: int
    fx: float
    fy: float
    cx: float
    cy: float
    rotation: tuple[float, float, float, float]
    translation: tuple[float, float, float]
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        q = tuple(float(v) for v in self.rotation)
        t = tuple(float(v) for v in self.translation)
        if len(q) != 4 or len(t) != 3:
            raise ValueError("rotation must have 4 components and translation 3")
        object.__setattr__(self, "rotation", q)
        object.__setattr__(self, "translation", t)
        for name in ("fx", "fy", "cx", "cy"):
            object.__setattr__(self, name, float(getattr(self, name)))
        problems = camera_violations(self)
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def R(self) -> np.ndarray:
        return quat_to_rotmat(np.array(self.rotation))

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.t

    @property
    def optical_axis(self) -> np.ndarray:
        """World-space viewing direction (camera +z)."""
        return self.R[2].copy()

    def with_image_size(self, width: int, height: int) -> "Camera":
        return Camera(self.frame_id, self.fx, self.fy, self.cx, self.cy, self.rotation,
                      self.translation, int(width), int(height))


def camera_violations(cam: Camera, width: int | None = None, height: int | None = None) -> list[str]:
    width = cam.width if width is None else width
    height = cam.height if height is None else height
    out = []
    qn = float(np.linalg.norm(cam.rotation))
    if not np.all(np.isfinite(cam.rotation)) or abs(qn - 1.0) > 1e-9:
        out.append(f"camera {cam.frame_id}: quaternion norm {qn!r} is not 1")
    if not np.all(np.isfinite(cam.translation)):
        out.append(f"camera {cam.frame_id}: non-finite translation")
    if not (cam.fx > 0 and cam.fy > 0):
        out.append(f"camera {cam.frame_id}: focal lengths must be positive (fx={cam.fx}, fy={cam.fy})")
    if width is not None and not (0 <= cam.cx < width):
        out.append(f"camera {cam.frame_id}: cx={cam.cx} outside [0, {width})")
    if height is not None and not (0 <= cam.cy < height):
        out.append(f"camera {cam.frame_id}: cy={cam.cy} outside [0, {height})")
    return out


def look_at_camera(frame_id: int, eye, target, up, fx: float, fy: float, cx: float, cy: float,
                   width: int | None = None, height: int | None = None) -> Camera:
    """Build a camera at ``eye`` whose +z axis points at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    zc = np.asarray(target, dtype=np.float64) - eye
    zc /= np.linalg.norm(zc)
    xc = np.cross(zc, np.asarray(up, dtype=np.float64))
    xc /= np.linalg.norm(xc)
    yc = np.cross(zc, xc)
    R = np.stack([xc, yc, zc])
    q = rotmat_to_quat(R)
    t = -quat_to_rotmat(q) @ eye
    return Camera(frame_id, fx, fy, cx, cy, tuple(q), tuple(t), width, height)


@dataclass(frozen=True)
class Gaussian:
    """One splat in natural parameters (read-only view into a cloud)."""

    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray


def _readonly(a, shape_tail, name):
    arr = np.array(a, dtype=np.float64)
    if arr.ndim != 1 + len(shape_tail) or arr.shape[1:] != shape_tail:
        raise ValueError(f"{name} must have shape (N, {', '.join(map(str, shape_tail))}), got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GaussianCloud:
    """Struct-of-arrays Gaussian model in natural parameters.

    The constructor enforces every per-Gaussian invariant.  Use
    :meth:`unchecked` for data that :func:`validate_scene` should inspect
    instead of rejecting.
    """

    positions: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    _checked: bool = field(default=True, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "positions", _readonly(self.positions, (3,), "positions"))
        object.__setattr__(self, "scales", _readonly(self.scales, (3,), "scales"))
        rot = np.array(self.rotations, dtype=np.float64)
        if self._checked and rot.ndim == 2 and rot.shape[1] == 4:
            norms = np.linalg.norm(rot, axis=1, keepdims=True)
            if np.any(norms == 0):
                raise ValueError("zero quaternion")
            rot = rot / norms
        object.__setattr__(self, "rotations", _readonly(rot, (4,), "rotations"))
        object.__setattr__(self, "opacities", _readonly(np.reshape(self.opacities, (-1, 1)), (1,), "opacities")[:, 0])
        object.__setattr__(self, "colors", _readonly(self.colors, (3,), "colors"))
        n = len(self.positions)
        if not all(len(a) == n for a in (self.scales, self.rotations, self.opacities, self.colors)):
            raise ValueError("parameter arrays disagree on Gaussian count")
        if self._checked:
            problems = cloud_violations(self)
            if problems:
                raise ValueError("; ".join(problems[:5]))

    @classmethod
    def unchecked(cls, positions, scales, rotations, opacities, colors) -> "GaussianCloud":
        return cls(positions, scales, rotations, opacities, colors, _checked=False)

    @classmethod
    def from_gaussians(cls, gaussians) -> "GaussianCloud":
        gs = list(gaussians)
        return cls([g.position for g in gs], [g.scale for g in gs], [g.rotation for g in gs],
                   [g.opacity for g in gs], [g.color for g in gs])

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(self.positions[i], self.scales[i], self.rotations[i],
                        float(self.opacities[i]), self.colors[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, index) -> "GaussianCloud":
        return GaussianCloud(self.positions[index], self.scales[index], self.rotations[index],
                             self.opacities[index], self.colors[index], _checked=self._checked)

    def replace(self, **kw) -> "GaussianCloud":
        params = dict(positions=self.positions, scales=self.scales, rotations=self.rotations,
                      opacities=self.opacities, colors=self.colors)
        params.update(kw)
        return GaussianCloud(**params)

    def arrays(self) -> dict[str, np.ndarray]:
        return dict(positions=self.positions, scales=self.scales, rotations=self.rotations,
                    opacities=self.opacities, colors=self.colors)


def cloud_violations(cloud: GaussianCloud) -> list[str]:
    out = []
    if len(cloud) == 0:
        out.append("cloud is empty")
    for name, arr in cloud.arrays().items():
        bad = np.flatnonzero(~np.all(np.isfinite(arr.reshape(len(arr), -1 if arr.size else 0)), axis=1))
        for i in bad:
            out.append(f"gaussian {i}: non-finite {name}")
    for i in np.flatnonzero(np.any(cloud.scales < SCALE_FLOOR, axis=1)):
        out.append(f"gaussian {i}: scale {cloud.scales[i].tolist()} below floor {SCALE_FLOOR}")
    qn = np.linalg.norm(cloud.rotations, axis=1)
    for i in np.flatnonzero(np.abs(qn - 1.0) > 1e-9):
        out.append(f"gaussian {i}: quaternion norm {qn[i]!r} is not 1")
    for i in np.flatnonzero(~((cloud.opacities > 0) & (cloud.opacities <= 1))):
        out.append(f"gaussian {i}: opacity {cloud.opacities[i]!r} outside (0, 1)")
    return out


@dataclass(frozen=True)
class RecurrenceConfig:
    k: int = 9
    threshold: float = 2e-4
    steps_per_iteration: int = 1000
    max_iterations: int = 60
    warmup_steps: int = 5000

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not self.threshold > 0:
            raise ValueError("threshold must be > 0")
        if self.steps_per_iteration < 1:
            raise ValueError("steps_per_iteration must be >= 1")
        if self.max_iterations < 1 or self.warmup_steps < 0:
            raise ValueError("max_iterations must be >= 1 and warmup_steps >= 0")


@dataclass
class RecurrenceState:
    caustics: list[np.ndarray]
    iteration: int = 0
    change_history: list[float] = field(default_factory=list)
    converged: bool = False


def validate_scene(cloud: GaussianCloud, cameras, images) -> list[str]:
    """Return a list of human-readable problems; empty means the scene is usable."""
    report = []
    cameras = list(cameras)
    images = list(images)
    if len(cameras) != len(images):
        report.append(f"camera count {len(cameras)} does not match image count {len(images)}")
    report.extend(cloud_violations(cloud))
    for k, img in enumerate(images):
        arr = np.asarray(img)
        if arr.ndim != 3 or arr.shape[2] != 3:
            report.append(f"image {k}: shape {arr.shape} is not (H, W, 3)")
            continue
        if not np.all(np.isfinite(arr)):
            report.append(f"image {k}: contains NaN or Inf")
    for cam, img in zip(cameras, images):
        arr = np.asarray(img)
        h, w = (arr.shape[0], arr.shape[1]) if arr.ndim == 3 else (None, None)
        report.extend(camera_violations(cam, w, h))
    return report
