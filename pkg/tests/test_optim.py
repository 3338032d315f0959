from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import dist_reference, ssim_reference
from recgs.core import GaussianCloud, look_at_camera
from recgs.optim import (Adam, DivergenceError, LossConfig, OptimizerConfig, SplatTrainer, cloud_to_raw, dist,
                         dist_and_grads, fit, fit_joint, ssim)
from recgs.spectral import SpectralCoefficients, build_mask, reconstruct_from_coefficients
from recgs.splat import render
from recgs.synth import perturb_cloud

ZERO_LR = dict(lr_position=0.0, lr_scale=0.0, lr_rotation=0.0, lr_opacity=0.0, lr_color=0.0)


def nadir(w=32, h=32, f=32.0, frame_id=0, x=0.0):
    return look_at_camera(frame_id, (x, 0, 2), (x, 0, 0), (0, 1, 0), f, f, w / 2, h / 2, w, h)


def planar_cloud(n=20, seed=0):
    rng = np.random.default_rng(seed)
    pos = np.c_[rng.uniform(-0.8, 0.8, (n, 2)), np.zeros(n)]
    q = np.tile([1.0, 0, 0, 0], (n, 1))
    return GaussianCloud(pos, np.c_[rng.uniform(0.15, 0.35, (n, 2)), np.full(n, 0.02)], q,
                         rng.uniform(0.6, 0.95, n), rng.uniform(0.1, 0.9, (n, 3)))


# --- dist ---------------------------------------------------------------------

def test_dist_identical_is_zero():
    A = np.random.default_rng(0).uniform(size=(16, 16, 3))
    assert dist(A, A) == 0.0


def test_dist_l1_constant_offset():
    A = np.random.default_rng(1).uniform(size=(16, 16, 3))
    assert dist(A, A + 0.1, LossConfig(lambda_dssim=0.0)) == pytest.approx(0.1, abs=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_dist_matches_reference(seed):
    rng = np.random.default_rng(seed)
    A, B = rng.uniform(size=(2, 32, 32, 3))
    assert abs(dist(A, B) - dist_reference(A, B)) < 1e-6
    assert abs(ssim(A, B) - ssim_reference(A, B)) < 1e-6


def test_dist_shape_mismatch():
    with pytest.raises(ValueError):
        dist(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_dist_symmetric_and_nonnegative(seed):
    rng = np.random.default_rng(seed)
    A, B = rng.uniform(-0.2, 1.2, (2, 13, 17, 3))
    assert dist(A, B) >= 0
    assert abs(dist(A, B) - dist(B, A)) < 1e-12
    assert dist(A, A) < 1e-12


def test_dist_gradients_match_finite_differences():
    rng = np.random.default_rng(5)
    A, B = rng.uniform(size=(2, 12, 10, 3))
    value, g_a, g_b = dist_and_grads(A, B)
    assert value == pytest.approx(dist(A, B), abs=1e-12)
    eps = 1e-6
    for idx in [(0, 0, 0), (5, 4, 1), (11, 9, 2), (6, 2, 0)]:
        for X, g, f in ((B, g_b, lambda x: dist(A, x)), (A, g_a, lambda x: dist(x, B))):
            xp, xm = X.copy(), X.copy()
            xp[idx] += eps
            xm[idx] -= eps
            assert abs((f(xp) - f(xm)) / (2 * eps) - g[idx]) < 1e-6


def test_target_gradient_skipped_unless_requested():
    A, B = np.random.default_rng(2).uniform(size=(2, 8, 8, 3))
    _, g_a, g_b = dist_and_grads(A, B, grad_a=False)
    assert g_a is None
    np.testing.assert_array_equal(g_b, dist_and_grads(A, B)[2])


# --- fit ------------------------------------------------------------------------

def test_zero_gradient_fixed_point():
    cloud = planar_cloud(8)
    cams = [nadir(frame_id=i, x=0.1 * i) for i in range(3)]
    frames = [(c, render(cloud, c, 32, 32)) for c in cams]
    res = fit(cloud, frames, opt=OptimizerConfig(steps=20))
    assert max(res.losses) < 1e-12
    for k, v in cloud.arrays().items():
        assert np.max(np.abs(res.cloud.arrays()[k] - v)) < 1e-6


def test_planar_scene_loss_drops_below_ten_percent():
    gt = planar_cloud(20, seed=3)
    cams = [nadir(frame_id=i, x=0.15 * (i - 1)) for i in range(3)]
    frames = [(c, render(gt, c, 32, 32)) for c in cams]
    res = fit(perturb_cloud(gt, 0.5, seed=1), frames, opt=OptimizerConfig(steps=2000))
    assert np.mean(res.losses[-100:]) < 0.1 * res.losses[0], (res.losses[0], np.mean(res.losses[-100:]))


def test_single_gaussian_color_converges_to_constant():
    cam = nadir(16, 16)
    cloud = GaussianCloud([[0.0, 0.0, 0.0]], [[50.0, 50.0, 50.0]], [[1.0, 0, 0, 0]], [0.9999], [[0.2, 0.3, 0.9]])
    target = np.full((16, 16, 3), [0.6, 0.45, 0.5])
    # opacity frozen near 1 so the optimum is the target color itself
    res = fit(cloud, [(cam, target)], opt=OptimizerConfig(steps=1500, lr_opacity=0.0))
    np.testing.assert_allclose(res.cloud.colors[0], target[0, 0], atol=1e-3)


def test_caustics_must_match_frames():
    cloud = planar_cloud(4)
    frames = [(nadir(), np.zeros((32, 32, 3)))]
    with pytest.raises(ValueError):
        fit(cloud, frames, caustics=[np.zeros((32, 31, 3))], opt=OptimizerConfig(steps=1))


def test_signed_targets_are_accepted():
    cloud = planar_cloud(4)
    frames = [(nadir(), np.zeros((32, 32, 3)))]
    res = fit(cloud, frames, caustics=[np.full((32, 32, 3), 0.3)], opt=OptimizerConfig(steps=3))
    assert np.all(np.isfinite(res.losses))


def test_zero_step_sizes_are_identity():
    cloud = planar_cloud(6)
    trainer = SplatTrainer(cloud, [(nadir(), np.full((32, 32, 3), 0.5))], OptimizerConfig(**ZERO_LR))
    before = {k: v.copy() for k, v in trainer.raw.items()}
    trainer.step()
    for k, v in before.items():
        np.testing.assert_array_equal(trainer.raw[k], v)


def test_adam_matches_closed_form():
    rng = np.random.default_rng(0)
    p0 = dict(a=rng.normal(size=5), b=rng.normal(size=(2, 3)))
    lrs = dict(a=0.1, b=0.01)
    params = {k: v.copy() for k, v in p0.items()}
    adam = Adam(params, lrs)
    gs = [{k: rng.normal(size=v.shape) for k, v in p0.items()} for _ in range(3)]
    for g in gs:
        adam.step(params, g)
    for k in p0:
        m = v = 0.0
        x = p0[k].copy()
        for t, g in enumerate(gs, start=1):
            m = 0.9 * m + 0.1 * g[k]
            v = 0.999 * v + 0.001 * g[k] ** 2
            x -= lrs[k] * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        np.testing.assert_allclose(params[k], x, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("value", [-1.0, float("nan"), float("inf")])
def test_bad_step_size_rejected(value):
    with pytest.raises(ValueError):
        OptimizerConfig(lr_color=value)


def test_training_is_deterministic():
    gt = planar_cloud(10, seed=2)
    frames = [(nadir(frame_id=i, x=0.1 * i), render(gt, nadir(x=0.1 * i), 32, 32)) for i in range(3)]
    init = perturb_cloud(gt, 0.3)
    a = fit(init, frames, opt=OptimizerConfig(steps=30, seed=4))
    b = fit(init, frames, opt=OptimizerConfig(steps=30, seed=4))
    assert a.losses == b.losses
    for k, v in a.cloud.arrays().items():
        np.testing.assert_array_equal(v, b.cloud.arrays()[k])


def test_round_robin_visits_every_frame_once_per_cycle():
    cloud = planar_cloud(4)
    frames = [(nadir(frame_id=i), np.zeros((32, 32, 3))) for i in range(5)]
    trainer = SplatTrainer(cloud, frames, OptimizerConfig(seed=9))
    assert sorted(trainer.order.tolist()) == list(range(5))


def test_divergence_guard_trips_after_patience():
    cloud = planar_cloud(4)
    trainer = SplatTrainer(cloud, [(nadir(), np.zeros((32, 32, 3)))], OptimizerConfig(divergence_patience=5))
    values = iter([0.1] + [5.0] * 4 + [0.1] + [5.0] * 5)
    trainer.step = lambda: next(values)
    with pytest.raises(DivergenceError):
        trainer.run(11)


def test_non_finite_loss_is_divergence():
    cloud = planar_cloud(4)
    trainer = SplatTrainer(cloud, [(nadir(), np.zeros((32, 32, 3)))])
    trainer.step = lambda: float("nan")
    with pytest.raises(DivergenceError):
        trainer.run(1)


# --- fit_joint --------------------------------------------------------------------

def test_joint_with_frozen_coefficients_equals_fit():
    gt = planar_cloud(10, seed=6)
    cams = [nadir(frame_id=i, x=0.1 * i) for i in range(3)]
    frames = [(c, render(gt, c, 32, 32) + 0.05) for c in cams]
    init = perturb_cloud(gt, 0.3)
    opt = OptimizerConfig(steps=40, lr_coeff=0.0)
    a = fit(init, frames, opt=opt)
    b = fit_joint(init, frames, opt=opt)
    assert a.losses == b.losses
    for k, v in a.cloud.arrays().items():
        np.testing.assert_array_equal(v, b.cloud.arrays()[k])
    assert not np.any(b.coeffs.params)


def test_joint_dc_coefficient_tracks_mean_residual():
    cloud = planar_cloud(10, seed=7)
    cam = nadir()
    pred = render(cloud, cam, 32, 32)
    rng = np.random.default_rng(0)
    image = pred + 0.1 + rng.uniform(-0.02, 0.02, pred.shape)
    opt = OptimizerConfig(steps=600, **ZERO_LR)
    res = fit_joint(cloud, [(cam, image)], opt=opt, loss=LossConfig(lambda_dssim=0.0))
    C = reconstruct_from_coefficients(res.coeffs, 0, 32, 32)
    np.testing.assert_allclose(C.mean(axis=(0, 1)), (image - pred).mean(axis=(0, 1)), atol=1e-3)


def test_joint_rejects_mismatched_coefficients():
    cloud = planar_cloud(4)
    frames = [(nadir(), np.zeros((32, 32, 3)))]
    with pytest.raises(ValueError):
        fit_joint(cloud, frames, SpectralCoefficients(build_mask(32, 32, 9), 2), OptimizerConfig(steps=1))
    with pytest.raises(ValueError):
        fit_joint(cloud, frames, SpectralCoefficients(build_mask(16, 32, 9), 1), OptimizerConfig(steps=1))


def test_joint_leaves_input_coefficients_untouched():
    cloud = planar_cloud(4)
    frames = [(nadir(), np.full((32, 32, 3), 0.4))]
    coeffs = SpectralCoefficients(build_mask(32, 32, 9), 1)
    res = fit_joint(cloud, frames, coeffs, OptimizerConfig(steps=5))
    assert not np.any(coeffs.params) and np.any(res.coeffs.params)


def test_trainer_copy_is_independent():
    cloud = planar_cloud(4)
    trainer = SplatTrainer(cloud, [(nadir(), np.full((32, 32, 3), 0.4))])
    clone = trainer.copy()
    trainer.run(3)
    np.testing.assert_array_equal(clone.raw["colors"], cloud_to_raw(cloud)["colors"])
    assert clone.step_count == 0
