"""Photometric loss, Adam, and the two training objectives.

``fit`` minimizes dist(I - C, render) with fixed per-frame caustics C;
``fit_joint`` additionally treats each frame's low-frequency spectrum as a
free variable.  Both share :class:`SplatTrainer`, which owns the raw
parameters and optimizer moments so that the recurrence can resume it.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import SCALE_FLOOR, Camera, GaussianCloud, as_image
from .spectral import SpectralCoefficients, reconstruct_from_coefficients
from .splat.raster import blur, rasterize, rasterize_backward, ssim_kernel

log = logging.getLogger(__name__)

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
# differences this small are rounding noise (e.g. from the raw-parameter round
# trip); their L1 subgradient is taken as 0 rather than +-1
L1_DEADZONE = 1e-12


class DivergenceError(RuntimeError):
    """Raised when the loss stays far above its starting value."""


@dataclass(frozen=True)
class LossConfig:
    lambda_dssim: float = 0.2
    ssim_window: int = 11
    ssim_sigma: float = 1.5

    def __post_init__(self):
        if not 0.0 <= self.lambda_dssim <= 1.0:
            raise ValueError("lambda_dssim must lie in [0, 1]")
        if self.ssim_window < 1 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be a positive odd integer")


@dataclass(frozen=True)
class OptimizerConfig:
    steps: int = 1000
    lr_position: float = 2e-4      # multiplied by the scene extent
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    lr_opacity: float = 5e-2
    lr_color: float = 2.5e-3
    lr_coeff: float = 1e-2         # multiplied by width * height
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    divergence_factor: float = 10.0
    divergence_patience: int = 50
    divergence_floor: float = 1e-3  # reference loss never below this, so a near-zero start cannot trip the guard

    def __post_init__(self):
        for name in ("lr_position", "lr_scale", "lr_rotation", "lr_opacity", "lr_color", "lr_coeff"):
            if not np.isfinite(getattr(self, name)) or getattr(self, name) < 0:
                raise ValueError(f"{name} must be finite and non-negative")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")

    def as_dict(self):
        return asdict(self)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - size // 2
    w = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


class _SSIMStats:
    """Window statistics of one image; reused while the target is fixed."""

    def __init__(self, img, w):
        self.mu = blur(img, w)
        self.sq = blur(img * img, w)


def ssim_terms(A, B, cfg: LossConfig = LossConfig(), stats_a=None, grads=False, grad_a=True):
    """Mean SSIM over channels with zero-padded Gaussian windows.

    With ``grads`` returns ``(value, d/dA, d/dB)``; d/dA is None unless
    ``grad_a``.
    """
    w = gaussian_window(cfg.ssim_window, cfg.ssim_sigma)
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    sa = stats_a or _SSIMStats(A, w)
    value, g_b, g_a = ssim_kernel(A, B, sa.mu, sa.sq, w, SSIM_C1, SSIM_C2, bool(grads and grad_a))
    if not grads:
        return value
    return value, g_a, g_b


def ssim(A, B, cfg: LossConfig = LossConfig()) -> float:
    A, B = as_image(A), as_image(B)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    return ssim_terms(A, B, cfg)


def dist(A, B, cfg: LossConfig = LossConfig()) -> float:
    """(1 - lambda) * mean|A - B| + lambda * (1 - SSIM(A, B))."""
    A, B = as_image(A), as_image(B)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {B.shape}")
    l1 = float(np.mean(np.abs(A - B)))
    if cfg.lambda_dssim == 0.0:
        return l1
    return (1.0 - cfg.lambda_dssim) * l1 + cfg.lambda_dssim * (1.0 - ssim_terms(A, B, cfg))


def dist_and_grads(A, B, cfg: LossConfig = LossConfig(), stats_a=None, grad_a=True):
    """Loss value with gradients w.r.t. A (None unless ``grad_a``) and B."""
    lam = cfg.lambda_dssim
    diff = B - A
    adiff = np.abs(diff)
    l1 = float(np.mean(adiff))
    if not np.any(adiff > L1_DEADZONE):
        # global minimum up to rounding; SSIM's rounding residue would otherwise
        # be amplified into full-size Adam steps
        value = dist(A, B, cfg)
        return value, (np.zeros_like(A) if grad_a else None), np.zeros_like(B)
    g_b = np.sign(diff)
    g_b[adiff <= L1_DEADZONE] = 0.0
    g_b *= (1.0 - lam) / diff.size
    if lam == 0.0:
        return l1, (-g_b if grad_a else None), g_b
    s, ds_da, ds_db = ssim_terms(A, B, cfg, stats_a, grads=True, grad_a=grad_a)
    g_a = -g_b - lam * ds_da if grad_a else None
    return (1.0 - lam) * l1 + lam * (1.0 - s), g_a, g_b - lam * ds_db


class Adam:
    """Adam over a dict of arrays, each with its own step size."""

    def __init__(self, params: dict[str, np.ndarray], lrs: dict[str, float], beta1=0.9, beta2=0.999, eps=1e-8):
        self.lrs = dict(lrs)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for k, g in grads.items():
            lr = self.lrs[k]
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if lr != 0.0:
                params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def scene_extent(cloud: GaussianCloud) -> float:
    """Largest distance from the cloud centroid, at least 1e-3."""
    p = cloud.positions
    return max(float(np.max(np.linalg.norm(p - p.mean(axis=0), axis=1))), 1e-3)


def cloud_to_raw(cloud: GaussianCloud) -> dict[str, np.ndarray]:
    o = np.clip(cloud.opacities, 1e-12, 1.0 - 1e-16)
    return dict(positions=cloud.positions.copy(),
                scale_raw=np.log(np.maximum(cloud.scales - SCALE_FLOOR, 1e-300)),
                rotations=cloud.rotations.copy(),
                opacity_raw=np.log(o) - np.log1p(-o),
                colors=cloud.colors.copy())


def raw_to_natural(raw) -> dict[str, np.ndarray]:
    return dict(positions=raw["positions"],
                scales=SCALE_FLOOR + np.exp(raw["scale_raw"]),
                rotations=raw["rotations"] / np.linalg.norm(raw["rotations"], axis=1, keepdims=True),
                opacities=1.0 / (1.0 + np.exp(-raw["opacity_raw"])),
                colors=raw["colors"])


def raw_to_cloud(raw) -> GaussianCloud:
    return GaussianCloud(**raw_to_natural(raw))


def _raw_grads(nat, g):
    o = nat["opacities"]
    return dict(positions=g["positions"],
                scale_raw=g["scales"] * (nat["scales"] - SCALE_FLOOR),
                rotations=g["rotations"],
                opacity_raw=g["opacities"] * o * (1.0 - o),
                colors=g["colors"])


@dataclass
class FitResult:
    cloud: GaussianCloud
    losses: list[float]
    coeffs: SpectralCoefficients | None = None
    renders: list[np.ndarray] | None = None


class SplatTrainer:
    """Single-owner mutable training state: raw parameters and Adam moments.

    Frames are visited in a seeded round-robin order that persists across
    :meth:`run` calls.
    """

    def __init__(self, cloud: GaussianCloud, frames, opt: OptimizerConfig = OptimizerConfig(),
                 loss: LossConfig = LossConfig(), coeffs: SpectralCoefficients | None = None):
        if len(cloud) == 0:
            raise ValueError("cannot train an empty cloud")
        self.frames = [(cam, as_image(img)) for cam, img in frames]
        if not self.frames:
            raise ValueError("need at least one frame")
        self.opt = opt
        self.loss_cfg = loss
        self.raw = cloud_to_raw(cloud)
        self.extent = scene_extent(cloud)
        lrs = dict(positions=opt.lr_position * self.extent, scale_raw=opt.lr_scale,
                   rotations=opt.lr_rotation, opacity_raw=opt.lr_opacity, colors=opt.lr_color)
        self.adam = Adam(self.raw, lrs, opt.beta1, opt.beta2, opt.eps)
        self.order = np.random.default_rng(opt.seed).permutation(len(self.frames))
        self.step_count = 0
        self.coeffs = None
        if coeffs is not None:
            self.attach_coefficients(coeffs)
        self._targets = {}
        self._caustics = None
        self.set_caustics(None)

    def attach_coefficients(self, coeffs: SpectralCoefficients):
        """Switch to joint mode: ``coeffs`` (mutated in place) become trainable."""
        if coeffs.n_frames != len(self.frames):
            raise ValueError("coefficients must cover every frame")
        h, w = self.frames[0][1].shape[:2]
        if (coeffs.mask.width, coeffs.mask.height) != (w, h):
            raise ValueError("coefficient mask does not match the frame size")
        self.coeffs = coeffs
        self.coeff_lr = self.opt.lr_coeff * w * h
        self.coeff_m = np.zeros_like(coeffs.params)
        self.coeff_v = np.zeros_like(coeffs.params)
        self.coeff_t = np.zeros(coeffs.n_frames, dtype=np.int64)

    def copy(self) -> "SplatTrainer":
        """Independent deep copy, used to branch runs from a shared warm-up."""
        return copy.deepcopy(self)

    def set_caustics(self, caustics):
        if caustics is not None:
            caustics = [as_image(c) for c in caustics]
            if len(caustics) != len(self.frames) or any(
                    c.shape != img.shape for c, (_, img) in zip(caustics, self.frames)):
                raise ValueError("caustics must match frames one-to-one in shape")
        self._caustics = caustics
        self._targets = {}

    def _target(self, f):
        """Target I - C and cached window statistics (fixed-caustic mode)."""
        if f not in self._targets:
            img = self.frames[f][1]
            tgt = img if self._caustics is None else img - self._caustics[f]
            w = gaussian_window(self.loss_cfg.ssim_window, self.loss_cfg.ssim_sigma)
            self._targets[f] = (tgt, _SSIMStats(tgt, w) if self.loss_cfg.lambda_dssim > 0 else None)
        return self._targets[f]

    def natural(self):
        return raw_to_natural(self.raw)

    def cloud(self) -> GaussianCloud:
        return raw_to_cloud(self.raw)

    def render(self, f: int):
        cam, img = self.frames[f]
        nat = self.natural()
        out, _ = rasterize(nat["positions"], nat["scales"], nat["rotations"], nat["opacities"],
                           nat["colors"], cam, img.shape[1], img.shape[0])
        return out

    def render_all(self):
        return [self.render(f) for f in range(len(self.frames))]

    def step(self) -> float:
        f = int(self.order[self.step_count % len(self.order)])
        self.step_count += 1
        cam, img = self.frames[f]
        h, w = img.shape[:2]
        nat = self.natural()
        pred, ctx = rasterize(nat["positions"], nat["scales"], nat["rotations"], nat["opacities"],
                              nat["colors"], cam, w, h)
        if self.coeffs is None:
            tgt, stats = self._target(f)
        else:
            caustic = reconstruct_from_coefficients(self.coeffs, f, w, h)
            tgt, stats = img - caustic, None
        value, g_tgt, g_pred = dist_and_grads(tgt, pred, self.loss_cfg, stats,
                                              grad_a=self.coeffs is not None)
        grads = _raw_grads(nat, rasterize_backward(ctx, g_pred))
        self.adam.step(self.raw, grads)
        np.clip(self.raw["colors"], 0.0, 1.0, out=self.raw["colors"])
        if self.coeffs is not None:
            # target = I - C, so dL/dC = -dL/dtarget; only this frame's spectrum moves
            self._coeff_step(f, self.coeffs.param_gradient(-g_tgt))
        return value

    def _coeff_step(self, f, g):
        o = self.opt
        self.coeff_t[f] += 1
        t = self.coeff_t[f]
        m, v = self.coeff_m[f], self.coeff_v[f]
        m *= o.beta1
        m += (1.0 - o.beta1) * g
        v *= o.beta2
        v += (1.0 - o.beta2) * g * g
        if self.coeff_lr != 0.0:
            self.coeffs.params[f] -= self.coeff_lr * (m / (1.0 - o.beta1 ** t)) / (
                np.sqrt(v / (1.0 - o.beta2 ** t)) + o.eps)

    def run(self, steps: int, callback=None) -> list[float]:
        losses = []
        initial = None
        above = 0
        for _ in range(steps):
            value = self.step()
            losses.append(value)
            if not np.isfinite(value):
                raise DivergenceError(f"non-finite loss at step {self.step_count}")
            if initial is None:
                initial = value
            elif value > self.opt.divergence_factor * max(initial, self.opt.divergence_floor):
                above += 1
                if above >= self.opt.divergence_patience:
                    raise DivergenceError(
                        f"loss {value:.4g} above {self.opt.divergence_factor}x initial {initial:.4g} "
                        f"for {above} consecutive steps")
            else:
                above = 0
            if callback is not None:
                callback(self.step_count, value)
        return losses


def fit(cloud: GaussianCloud, frames, caustics=None, opt: OptimizerConfig = OptimizerConfig(),
        loss: LossConfig = LossConfig()) -> FitResult:
    """Minimize dist(I - C, render) over the cloud for ``opt.steps`` steps."""
    trainer = SplatTrainer(cloud, frames, opt, loss)
    trainer.set_caustics(caustics)
    losses = trainer.run(opt.steps)
    return FitResult(trainer.cloud(), losses, renders=trainer.render_all())


def fit_joint(cloud: GaussianCloud, frames, coeffs: SpectralCoefficients | None = None,
              opt: OptimizerConfig = OptimizerConfig(), loss: LossConfig = LossConfig(), k: int = 9,
              trainer: SplatTrainer | None = None) -> FitResult:
    """Jointly optimize the cloud and each frame's low-frequency spectrum.

    Coefficients start at zero unless ``coeffs`` is given (it is copied).
    A ``trainer`` in zero-caustic mode may be passed to continue from its
    parameters and moments instead of ``cloud``; it is mutated.
    """
    from .spectral import build_mask

    frames = list(frames)
    if coeffs is None:
        h, w = np.asarray(frames[0][1]).shape[:2]
        coeffs = SpectralCoefficients(build_mask(w, h, k), len(frames))
    else:
        coeffs = coeffs.copy()
    if trainer is None:
        trainer = SplatTrainer(cloud, frames, opt, loss)
    trainer.set_caustics(None)
    trainer.attach_coefficients(coeffs)
    losses = trainer.run(opt.steps)
    return FitResult(trainer.cloud(), losses, coeffs, renders=trainer.render_all())
