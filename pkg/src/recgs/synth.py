"""Synthetic seafloor benchmark with known ground truth.

A benchmark is a Gaussian seafloor (flat or with relief), a top-down camera
sweep, and one additive caustic image per frame.  Observations are
``clip(render + caustic, 0, OBS_MAX)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .core import Camera, GaussianCloud, look_at_camera, zeros_image
from .splat import render

OBS_MAX = 1.2


@dataclass(frozen=True)
class CausticFieldSpec:
    mode: str = "sinusoid-mixture"
    num_components: int = 4
    spatial_frequency_range: tuple[float, float] = (0.8, 1.5)   # cycles per image width
    temporal_speed_range: tuple[float, float] = (2.0, 2.8)      # radians per frame
    orientation_range: tuple[float, float] = (0.0, float(np.pi))  # wave direction, radians from image +x
    amplitude: float = 0.25
    chroma_jitter: float = 0.15
    seed: int = 0
    # snap plane waves to integer DFT bins so band content is exact
    quantize: bool = True
    # half-wave rectify the mixture; makes the field non-negative with a DC offset
    rectify: bool = False
    # refraction mode only
    water_depth: float = 3.0
    wave_height: float = 0.05

    def __post_init__(self):
        if self.mode not in ("sinusoid-mixture", "refraction"):
            raise ValueError(f"unknown caustic mode {self.mode!r}")
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        lo, hi = self.spatial_frequency_range
        if not 0 < lo <= hi:
            raise ValueError("spatial_frequency_range must be positive and ordered")
        if self.num_components < 1:
            raise ValueError("num_components must be >= 1")
        if not 0 <= self.chroma_jitter < 1:
            raise ValueError("chroma_jitter must lie in [0, 1)")


@dataclass(frozen=True)
class SceneSpec:
    n_gaussians: int = 500
    extent: tuple[float, float, float, float] | None = None   # xmin, xmax, ymin, ymax; None = unit square
                                     # (benchmarks size it to the trajectory instead)
    relief: float = 0.0              # amplitude of the tallest relief bump, scene units
    relief_bumps: int = 6
    size_factor: float = 0.6         # splat std-dev in units of grid spacing
    jitter: float = 0.3              # position jitter in units of grid spacing
    opacity: float = 0.9
    texture_octaves: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_gaussians < 1:
            raise ValueError("n_gaussians must be >= 1")
        x0, x1, y0, y1 = self.bounds
        if not (x1 >= x0 and y1 >= y0):
            raise ValueError("extent must be ordered")
        if not 0 < self.opacity < 1:
            raise ValueError("opacity must lie in (0, 1)")

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        return (-1.0, 1.0, -1.0, 1.0) if self.extent is None else tuple(self.extent)


@dataclass(frozen=True)
class TrajectorySpec:
    mode: str = "lawnmower"          # lawnmower | arc | static
    n_frames: int = 24
    rows: int = 2
    altitude: float = 2.0
    width: int = 256
    height: int = 192
    focal: float = 256.0
    overlap: float = 0.75            # along-track overlap of consecutive frames
    row_overlap: float = 0.65
    center: tuple[float, float] = (0.0, 0.0)
    arc_radius: float = 2.0

    def __post_init__(self):
        if self.mode not in ("lawnmower", "arc", "static"):
            raise ValueError(f"unknown trajectory mode {self.mode!r}")
        if self.n_frames < 1 or self.rows < 1 or self.altitude <= 0 or self.focal <= 0:
            raise ValueError("invalid trajectory parameters")
        if not 0 <= self.overlap < 1 or not 0 <= self.row_overlap < 1:
            raise ValueError("overlaps must lie in [0, 1)")

    @property
    def footprint(self) -> tuple[float, float]:
        """Ground footprint (width, height) of a nadir view of z = 0."""
        return self.width * self.altitude / self.focal, self.height * self.altitude / self.focal


@dataclass(frozen=True)
class BenchmarkSpec:
    scene: SceneSpec = field(default_factory=lambda: SceneSpec(relief=0.25))
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    caustic: CausticFieldSpec = field(default_factory=CausticFieldSpec)
    margin: float = 0.35
    init_jitter: float = 0.25        # relative perturbation of the initial model

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkSpec":
        base = cls().as_dict()
        d = dict(d)
        sc = {**base["scene"], **d.pop("scene", {})}
        tr = {**base["trajectory"], **d.pop("trajectory", {})}
        ca = {**base["caustic"], **d.pop("caustic", {})}
        for key in ("extent",):
            if sc.get(key) is not None:
                sc[key] = tuple(sc[key])
        for key in ("center",):
            if key in tr:
                tr[key] = tuple(tr[key])
        for key in ("spatial_frequency_range", "temporal_speed_range", "orientation_range"):
            if key in ca:
                ca[key] = tuple(ca[key])
        unknown = set(d) - {"margin", "init_jitter"}
        if unknown:
            raise ValueError(f"unknown benchmark keys: {sorted(unknown)}")
        return cls(SceneSpec(**sc), TrajectorySpec(**tr), CausticFieldSpec(**ca), **d)


# --- scene -----------------------------------------------------------------

def _relief_params(spec: SceneSpec):
    rng = np.random.default_rng([spec.seed, 1])
    x0, x1, y0, y1 = spec.bounds
    centers = np.stack([rng.uniform(x0, x1, spec.relief_bumps), rng.uniform(y0, y1, spec.relief_bumps)], 1)
    widths = rng.uniform(0.3, 0.8, spec.relief_bumps)
    signs = rng.choice([-1.0, 1.0], spec.relief_bumps) * rng.uniform(0.5, 1.0, spec.relief_bumps)
    return centers, widths, signs


def relief_height(spec: SceneSpec, xy) -> np.ndarray:
    """Seafloor height at world (x, y); zero for a flat scene.

    A sum of Gaussian bumps scaled so the strongest has height ``relief``;
    where bumps overlap the surface can exceed it slightly.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    if spec.relief == 0.0:
        return np.zeros(len(xy))
    centers, widths, signs = _relief_params(spec)
    d2 = np.sum((xy[:, None, :] - centers[None]) ** 2, axis=2)
    h = np.sum(signs * np.exp(-0.5 * d2 / widths ** 2), axis=1)
    return spec.relief * h / max(np.max(np.abs(signs)), 1e-12)


def texture(spec: SceneSpec, xy) -> np.ndarray:
    """Procedural seafloor albedo in [0.2, 0.8] at world (x, y)."""
    xy = np.atleast_2d(np.asarray(xy, dtype=np.float64))
    rng = np.random.default_rng([spec.seed, 2])
    base = np.array([0.55, 0.5, 0.38])
    tint = np.array([[0.9, 0.7, 0.5], [0.3, 0.55, 0.5], [0.6, 0.4, 0.45]])
    val = np.zeros((len(xy), 3))
    for octave in range(spec.texture_octaves):
        freq = 1.5 * 2.0 ** octave
        amp = 0.5 ** octave
        for _ in range(3):
            theta = rng.uniform(0, np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            color = tint[rng.integers(0, len(tint))] - 0.55
            s = np.sin(freq * (xy[:, 0] * np.cos(theta) + xy[:, 1] * np.sin(theta)) + phase)
            val += amp * s[:, None] * color[None, :]
    return np.clip(base + 0.35 * val, 0.2, 0.8)


def make_scene(spec: SceneSpec) -> tuple[GaussianCloud, dict]:
    """Ground-truth cloud on the (possibly relief) plane z = h(x, y)."""
    x0, x1, y0, y1 = spec.bounds
    rng = np.random.default_rng([spec.seed, 0])
    n = spec.n_gaussians
    if n == 1:
        xy = np.array([[0.5 * (x0 + x1), 0.5 * (y0 + y1)]])
        spacing = max(x1 - x0, y1 - y0, 1.0)
    else:
        w, h = max(x1 - x0, 1e-9), max(y1 - y0, 1e-9)
        nx = max(1, int(round(np.sqrt(n * w / h))))
        ny = int(np.ceil(n / nx))
        spacing = max(w / nx, h / ny)
        gx, gy = np.meshgrid((np.arange(nx) + 0.5) / nx * w + x0, (np.arange(ny) + 0.5) / ny * h + y0)
        xy = np.stack([gx.ravel(), gy.ravel()], 1)
        # drop surplus cells at random so exactly n remain
        keep = np.sort(rng.permutation(len(xy))[:n])
        xy = xy[keep] + rng.uniform(-1, 1, (n, 2)) * spec.jitter * spacing
    z = relief_height(spec, xy)
    positions = np.column_stack([xy, z])
    sigma = spec.size_factor * spacing
    aniso = rng.uniform(0.8, 1.25, (n, 2)) if n > 1 else np.ones((n, 2))
    scales = np.column_stack([sigma * aniso, np.full(n, 0.15 * sigma)])
    yaw = rng.uniform(0, np.pi, n) if n > 1 else np.zeros(n)
    rotations = np.column_stack([np.cos(yaw / 2), np.zeros(n), np.zeros(n), np.sin(yaw / 2)])
    colors = texture(spec, xy)
    opac = np.full(n, spec.opacity)
    cloud = GaussianCloud(positions, scales, rotations, opac, colors)
    return cloud, dict(spacing=float(spacing), sigma=float(sigma), n=n, extent=list(spec.bounds),
                       relief=spec.relief)


def perturb_cloud(cloud: GaussianCloud, amount: float, seed: int = 0) -> GaussianCloud:
    """Jitter a ground-truth cloud into an initial model.

    Positions move by ``amount`` times each splat's in-plane scale, scales and
    colors are perturbed multiplicatively/additively.
    """
    rng = np.random.default_rng([seed, 7])
    n = len(cloud)
    s = cloud.scales[:, :2].mean(axis=1, keepdims=True)
    pos = cloud.positions + rng.normal(size=(n, 3)) * amount * s * np.array([1.0, 1.0, 0.3])
    scales = cloud.scales * np.exp(rng.normal(size=(n, 3)) * amount)
    colors = np.clip(cloud.colors + rng.normal(size=(n, 3)) * amount * 0.3, 0.0, 1.0)
    opac = np.clip(cloud.opacities + rng.normal(size=n) * amount * 0.1, 0.05, 0.98)
    return GaussianCloud(pos, scales, cloud.rotations, opac, colors)


# --- trajectory ------------------------------------------------------------

def _nadir(frame_id, x, y, spec: TrajectorySpec, ground=0.0):
    eye = np.array([x, y, ground + spec.altitude])
    # image +x along world +x, image +y along world -y
    return look_at_camera(frame_id, eye, [x, y, ground], [0.0, 1.0, 0.0], spec.focal, spec.focal,
                          (spec.width - 1) / 2.0, (spec.height - 1) / 2.0, spec.width, spec.height)


def trajectory_centers(spec: TrajectorySpec) -> np.ndarray:
    cx, cy = spec.center
    fw, fh = spec.footprint
    n = spec.n_frames
    if spec.mode == "static" or n == 1:
        return np.tile([cx, cy], (n, 1)).astype(np.float64)
    if spec.mode == "arc":
        span = (1.0 - spec.overlap) * fw * (n - 1) / spec.arc_radius
        ang = np.linspace(-span / 2, span / 2, n)
        return np.stack([cx + spec.arc_radius * np.sin(ang),
                         cy + spec.arc_radius * (1 - np.cos(ang)) - spec.arc_radius * (1 - np.cos(span / 2)) / 2], 1)
    rows = min(spec.rows, n)
    per_row = int(np.ceil(n / rows))
    step = (1.0 - spec.overlap) * fw
    row_step = (1.0 - spec.row_overlap) * fh
    out = []
    for r in range(rows):
        xs = (np.arange(per_row) - (per_row - 1) / 2.0) * step
        if r % 2:
            xs = xs[::-1]
        y = (r - (rows - 1) / 2.0) * row_step
        out.extend((cx + x, cy + y) for x in xs)
    return np.array(out[:n])


def make_trajectory(spec: TrajectorySpec) -> list[Camera]:
    """Top-down cameras sweeping the scene; deterministic."""
    return [_nadir(i, x, y, spec) for i, (x, y) in enumerate(trajectory_centers(spec))]


def footprint_overlap(a: Camera, b: Camera, spec: TrajectorySpec) -> float:
    """Fraction of a nadir footprint on z = 0 shared by two cameras."""
    fw, fh = spec.footprint
    ca, cb = a.center, b.center
    ox = max(0.0, fw - abs(ca[0] - cb[0]))
    oy = max(0.0, fh - abs(ca[1] - cb[1]))
    return ox * oy / (fw * fh)


# --- caustics --------------------------------------------------------------

def _components(spec: CausticFieldSpec, width: int, height: int):
    rng = np.random.default_rng([spec.seed, 3])
    lo, hi = spec.spatial_frequency_range
    comps = []
    for _ in range(spec.num_components):
        theta = rng.uniform(*spec.orientation_range)
        f = rng.uniform(lo, hi)
        phase = rng.uniform(0, 2 * np.pi)
        speed = rng.uniform(*spec.temporal_speed_range) * rng.choice([-1.0, 1.0])
        weight = rng.uniform(0.5, 1.0)
        gains = 1.0 + spec.chroma_jitter * rng.uniform(-1, 1, 3)
        # cycles per image along x and y
        u = f * np.cos(theta)
        v = f * np.sin(theta) * height / width
        if spec.quantize:
            u, v = float(np.round(u)), float(np.round(v))
            if u == 0 and v == 0:
                u = 1.0
        comps.append((u, v, phase, speed, weight, gains))
    return comps


def _sinusoid_mixture(spec: CausticFieldSpec, frame: int, width: int, height: int) -> np.ndarray:
    comps = _components(spec, width, height)
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    field = np.zeros((height, width, 3))
    total = 0.0
    for u, v, phase, speed, weight, gains in comps:
        wave = np.cos(2 * np.pi * (u * x / width + v * y / height) + phase + speed * frame)
        field += weight * wave[:, :, None] * gains[None, None, :]
        total += weight * gains.max()
    field /= total
    if spec.rectify:
        field = np.maximum(field, 0.0)
    return spec.amplitude * field


def _refraction(spec: CausticFieldSpec, frame: int, width: int, height: int) -> np.ndarray:
    rng = np.random.default_rng([spec.seed, 4])
    ss = 3  # rays per pixel per axis
    y, x = np.mgrid[0:height * ss, 0:width * ss].astype(np.float64) / ss
    lo, hi = spec.spatial_frequency_range
    gx = np.zeros_like(x)
    gy = np.zeros_like(y)
    for _ in range(spec.num_components):
        theta = rng.uniform(0, 2 * np.pi)
        f = rng.uniform(lo, hi) / width          # cycles per pixel
        phase = rng.uniform(0, 2 * np.pi)
        speed = rng.uniform(*spec.temporal_speed_range)
        k = 2 * np.pi * f
        arg = k * (x * np.cos(theta) + y * np.sin(theta)) + phase + speed * frame
        # gradient of wave_height * sin(arg); heights in pixel units
        amp = spec.wave_height * width
        gx += amp * k * np.cos(theta) * np.cos(arg) / spec.num_components
        gy += amp * k * np.sin(theta) * np.cos(arg) / spec.num_components
    # small-angle Snell refraction of vertical rays, air to water
    bend = spec.water_depth * (1.0 - 1.0 / 1.33)
    lx = np.mod(x - bend * gx, width)
    ly = np.mod(y - bend * gy, height)
    idx = (np.floor(ly).astype(np.int64) % height) * width + (np.floor(lx).astype(np.int64) % width)
    density = np.bincount(idx.ravel(), minlength=width * height).reshape(height, width).astype(np.float64)
    density /= density.mean()
    from scipy.ndimage import gaussian_filter
    density = gaussian_filter(density, 1.0, mode="wrap") - 1.0
    peak = np.max(np.abs(density))
    field = density / peak if peak > 0 else density
    rng_c = np.random.default_rng([spec.seed, 5])
    gains = 1.0 + spec.chroma_jitter * rng_c.uniform(-1, 1, 3)
    out = field[:, :, None] * (gains / gains.max())[None, None, :]
    if spec.rectify:
        out = np.maximum(out, 0.0)
    return spec.amplitude * out


def make_caustic(spec: CausticFieldSpec, frame_index: int, width: int, height: int) -> np.ndarray:
    """Additive RGB caustic image for one frame."""
    if width < 1 or height < 1:
        raise ValueError("caustic size must be positive")
    if spec.amplitude == 0.0:
        return zeros_image(width, height)
    if spec.mode == "sinusoid-mixture":
        return _sinusoid_mixture(spec, frame_index, width, height)
    return _refraction(spec, frame_index, width, height)


# --- benchmark -------------------------------------------------------------

def scene_extent_for(traj: TrajectorySpec, margin: float):
    centers = trajectory_centers(traj)
    fw, fh = traj.footprint
    return (float(centers[:, 0].min() - fw / 2 - margin), float(centers[:, 0].max() + fw / 2 + margin),
            float(centers[:, 1].min() - fh / 2 - margin), float(centers[:, 1].max() + fh / 2 + margin))


@dataclass
class Benchmark:
    spec: BenchmarkSpec
    cloud: GaussianCloud
    init_cloud: GaussianCloud
    cameras: list
    clean: list
    caustics: list
    observations: list
    meta: dict

    @property
    def frames(self):
        return list(zip(self.cameras, self.observations))


def make_benchmark(spec: BenchmarkSpec = BenchmarkSpec()) -> Benchmark:
    """Ground truth scene, cameras, clean renders, caustics and observations."""
    traj = spec.trajectory
    scene = spec.scene
    if scene.extent is None:
        scene = replace(scene, extent=scene_extent_for(traj, spec.margin))
    cloud, meta = make_scene(scene)
    cams = make_trajectory(traj)
    w, h = traj.width, traj.height
    clean = [render(cloud, c, w, h) for c in cams]
    caustics = [make_caustic(spec.caustic, i, w, h) for i in range(len(cams))]
    obs = [np.clip(a + c, 0.0, OBS_MAX) for a, c in zip(clean, caustics)]
    clamped = float(np.mean([np.mean((a + c < 0.0) | (a + c > OBS_MAX)) for a, c in zip(clean, caustics)]))
    meta = dict(meta, clamped_fraction=clamped, scene_extent=list(scene.extent))
    init = perturb_cloud(cloud, spec.init_jitter, scene.seed)
    return Benchmark(replace(spec, scene=scene), cloud, init, cams, clean, caustics, obs, meta)
