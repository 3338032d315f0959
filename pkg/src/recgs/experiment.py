"""Datasets, run configuration and the method runners behind the CLI.

Dataset directory::

    manifest.json  poses.txt  scene.npz  init.npz
    images/NNNN.rcgf (+ .png)   clean/...   gt_caustic/...

Results directory::

    manifest.json  timing.json  model.npz  loss.jsonl  [delta.jsonl]
    renders/NNNN.rcgf (+ .png)  [caustic/NNNN.rcgf (+ .png)]  [flagged/NNNN.png]

``timing.json`` is the only file that varies between identical runs.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__, io
from .baseline import Plane, filter_sequence
from .core import Camera, GaussianCloud, RecurrenceConfig, as_image
from .optim import LossConfig, OptimizerConfig, SplatTrainer, fit_joint
from .recurrence import recur, warm_up
from .spectral import SpectralCoefficients, build_mask, reconstruct_from_coefficients
from .synth import Benchmark, BenchmarkSpec, make_benchmark
from .splat import COV_FLOOR, CUTOFF, NEAR_CLIP, T_MIN
from .splat.raster import BACKEND, TILE

METHODS = ("vanilla", "recurrent", "joint")


def _build(cls, d, name):
    if not isinstance(d, dict):
        raise ValueError(f"{name} must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown {name} keys: {sorted(unknown)}")
    return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run depends on besides the dataset.

    The vanilla model is the warm-up fit; joint training starts from that
    same warm-up and runs ``joint_steps`` more steps.
    """
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    recurrence: RecurrenceConfig = field(default_factory=RecurrenceConfig)
    joint_steps: int = 10000

    def __post_init__(self):
        if self.joint_steps < 0:
            raise ValueError("joint_steps must be non-negative")

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        unknown = set(d) - {"optimizer", "loss", "recurrence", "joint_steps"}
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(_build(OptimizerConfig, d.get("optimizer", {}), "optimizer"),
                   _build(LossConfig, d.get("loss", {}), "loss"),
                   _build(RecurrenceConfig, d.get("recurrence", {}), "recurrence"),
                   int(d.get("joint_steps", cls.joint_steps)))

    def with_overrides(self, seed=None, k=None, threshold=None, max_iterations=None) -> "TrainConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, optimizer=replace(cfg.optimizer, seed=seed))
        rc = {}
        if k is not None:
            rc["k"] = k
        if threshold is not None:
            rc["threshold"] = threshold
        if max_iterations is not None:
            rc["max_iterations"] = max_iterations
        if rc:
            cfg = replace(cfg, recurrence=replace(cfg.recurrence, **rc))
        return cfg


def _versions():
    return dict(recgs=__version__, numpy=np.__version__, backend=BACKEND)


# --- datasets --------------------------------------------------------------

@dataclass
class Dataset:
    cameras: list[Camera]
    images: list[np.ndarray]
    clean: list[np.ndarray] | None = None
    gt_caustics: list[np.ndarray] | None = None
    init_cloud: GaussianCloud | None = None
    plane: Plane = field(default_factory=Plane)
    manifest: dict = field(default_factory=dict)

    @property
    def frames(self):
        return list(zip(self.cameras, self.images))

    @classmethod
    def from_benchmark(cls, b: Benchmark) -> "Dataset":
        return cls(list(b.cameras), list(b.observations), list(b.clean), list(b.caustics), b.init_cloud,
                   Plane(), dict(benchmark=b.spec.as_dict()))


def _write_frames(directory: Path, images, png=True):
    io.ensure_dir(directory)
    for i, img in enumerate(images):
        io.write_float_image(directory / f"{io.frame_name(i)}.rcgf", img)
        if png:
            io.write_png(directory / f"{io.frame_name(i)}.png", img)


def _read_frames(directory: Path, n: int):
    return [io.read_float_image(directory / f"{io.frame_name(i)}.rcgf") for i in range(n)]


def write_dataset(b: Benchmark, out) -> Path:
    out = io.ensure_dir(out)
    _write_frames(out / "images", b.observations)
    _write_frames(out / "clean", b.clean)
    _write_frames(out / "gt_caustic", b.caustics)
    io.write_poses(out / "poses.txt", b.cameras)
    io.save_cloud(out / "scene.npz", b.cloud)
    io.save_cloud(out / "init.npz", b.init_cloud)
    io.write_json(out / "manifest.json", dict(
        kind="dataset", benchmark=b.spec.as_dict(), seeds=dict(scene=b.spec.scene.seed, caustic=b.spec.caustic.seed),
        frames=len(b.cameras), width=b.spec.trajectory.width, height=b.spec.trajectory.height,
        plane=dict(normal=[0.0, 0.0, 1.0], offset=0.0), meta=b.meta, versions=_versions(),
        paths=dict(out=str(out))))
    return out


def read_dataset(path) -> Dataset:
    path = Path(path)
    if not (path / "manifest.json").is_file():
        raise FileNotFoundError(f"{path} is not a dataset directory (no manifest.json)")
    manifest = io.read_json(path / "manifest.json")
    cams = io.read_poses(path / "poses.txt")
    n = len(cams)
    images = _read_frames(path / "images", n)
    clean = _read_frames(path / "clean", n) if (path / "clean").is_dir() else None
    gt = _read_frames(path / "gt_caustic", n) if (path / "gt_caustic").is_dir() else None
    init = io.load_cloud(path / "init.npz") if (path / "init.npz").is_file() else None
    plane = manifest.get("plane")
    plane = Plane(tuple(plane["normal"]), float(plane["offset"])) if plane else Plane()
    return Dataset(cams, images, clean, gt, init, plane, manifest)


# --- methods ---------------------------------------------------------------

@dataclass
class MethodResult:
    method: str
    cloud: GaussianCloud | None
    renders: list[np.ndarray]
    caustics: list[np.ndarray] | None = None
    losses: list[float] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    converged: bool | None = None
    iterations: int | None = None
    flagged: list[np.ndarray] | None = None
    timing: dict = field(default_factory=dict)


def run_warmup(ds: Dataset, cfg: TrainConfig) -> tuple[SplatTrainer, list[float]]:
    if ds.init_cloud is None:
        raise ValueError("dataset has no initial cloud")
    return warm_up(ds.frames, ds.init_cloud, cfg.recurrence.warmup_steps, cfg.optimizer, cfg.loss)


def run_vanilla(ds: Dataset, cfg: TrainConfig, warm=None) -> MethodResult:
    t = time.perf_counter()
    trainer, losses = warm if warm is not None else run_warmup(ds, cfg)
    renders = trainer.render_all()
    return MethodResult("vanilla", trainer.cloud(), renders, None, list(losses),
                        timing=dict(seconds=time.perf_counter() - t))


def run_recurrent(ds: Dataset, cfg: TrainConfig, warm=None, progress=None) -> MethodResult:
    """Recurrent caustic removal; ``warm`` is reused as a starting point, not mutated."""
    t = time.perf_counter()
    trainer, warm_losses = warm if warm is not None else run_warmup(ds, cfg)
    trainer = trainer.copy()
    history = []

    def sink(rec):
        history.append(rec)
        if progress is not None:
            progress(rec)

    res = recur(trainer, cfg.recurrence, sink)
    return MethodResult("recurrent", res.cloud, res.renders, res.caustics, list(warm_losses) + res.losses,
                        history, res.state.converged, res.state.iteration,
                        timing=dict(seconds=time.perf_counter() - t))


def run_joint(ds: Dataset, cfg: TrainConfig, warm=None) -> MethodResult:
    t = time.perf_counter()
    trainer, warm_losses = warm if warm is not None else run_warmup(ds, cfg)
    h, w = ds.images[0].shape[:2]
    coeffs = SpectralCoefficients(build_mask(w, h, cfg.recurrence.k), len(ds.images))
    res = fit_joint(trainer.cloud(), ds.frames, coeffs, replace(cfg.optimizer, steps=cfg.joint_steps), cfg.loss,
                    trainer=trainer.copy())
    caustics = [reconstruct_from_coefficients(res.coeffs, f, w, h) for f in range(len(ds.images))]
    return MethodResult("joint", res.cloud, res.renders, caustics, list(warm_losses) + res.losses,
                        timing=dict(seconds=time.perf_counter() - t))


def run_baseline(ds: Dataset, window: int) -> MethodResult:
    t = time.perf_counter()
    r = filter_sequence(ds.frames, ds.plane, window)
    return MethodResult("baseline", None, r.clean, r.caustic, flagged=r.flagged,
                        timing=dict(seconds=time.perf_counter() - t))


# --- results ---------------------------------------------------------------

def write_results(result: MethodResult, out, config: dict, dataset_path=None) -> Path:
    out = io.ensure_dir(out)
    _write_frames(out / "renders", result.renders)
    if result.caustics is not None:
        _write_frames(out / "caustic", result.caustics)
    if result.flagged is not None:
        io.ensure_dir(out / "flagged")
        for i, fl in enumerate(result.flagged):
            io.write_png(out / "flagged" / f"{io.frame_name(i)}.png",
                         np.repeat(fl[:, :, None].astype(np.float64), 3, axis=2))
    if result.cloud is not None:
        io.save_cloud(out / "model.npz", result.cloud)
    with io.JsonLog(out / "loss.jsonl") as log:
        for step, value in enumerate(result.losses, start=1):
            log(dict(step=step, loss=float(value)))
    if result.method == "recurrent":
        with io.JsonLog(out / "delta.jsonl") as log:
            for rec in result.history:
                log(rec)
    h, w = result.renders[0].shape[:2]
    k = config.get("train", {}).get("recurrence", {}).get("k")
    io.write_json(out / "manifest.json", dict(
        kind="results", method=result.method, config=config, versions=_versions(),
        renderer=dict(tile=TILE, cutoff=CUTOFF, transmittance_min=T_MIN, near_clip=NEAR_CLIP,
                      cov_floor=COV_FLOOR),
        kept_bins=None if k is None or result.method == "vanilla" else build_mask(w, h, k).size,
        paths=dict(dataset=None if dataset_path is None else str(dataset_path), out=str(out)),
        converged=result.converged, iterations=result.iterations, frames=len(result.renders)))
    io.write_json(out / "timing.json", result.timing)
    return out


def read_results(path) -> dict:
    path = Path(path)
    if not (path / "manifest.json").is_file():
        raise FileNotFoundError(f"{path} is not a results directory (no manifest.json)")
    manifest = io.read_json(path / "manifest.json")
    n = manifest["frames"]
    renders = _read_frames(path / "renders", n)
    caustics = _read_frames(path / "caustic", n) if (path / "caustic").is_dir() else None
    return dict(manifest=manifest, renders=renders, caustics=caustics)


def synth_dataset(spec: BenchmarkSpec, out) -> Path:
    return write_dataset(make_benchmark(spec), out)
