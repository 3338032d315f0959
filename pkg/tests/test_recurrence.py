import io as stdio
import json
import logging

import numpy as np
import pytest

from recgs.core import RecurrenceConfig, look_at_camera
from recgs.optim import DivergenceError, SplatTrainer
from recgs.recurrence import json_lines, recur, train_recurrent, warm_up
from recgs.spectral import build_mask, lowpass_reconstruct
from recgs.splat import render
from recgs.synth import CausticFieldSpec, SceneSpec, make_caustic, make_scene, perturb_cloud

W, H = 32, 24


def cams(n=3):
    return [look_at_camera(i, (0.15 * i - 0.15, 0, 2.5), (0.15 * i - 0.15, 0, 0), (0, 1, 0), 24.0, 24.0,
                           (W - 1) / 2, (H - 1) / 2, W, H) for i in range(n)]


@pytest.fixture(scope="module")
def scene():
    cloud, _ = make_scene(SceneSpec(n_gaussians=40))
    cs = cams()
    clean = [render(cloud, c, W, H) for c in cs]
    spec = CausticFieldSpec(amplitude=0.15)
    caustics = [make_caustic(spec, i, W, H) for i in range(len(cs))]
    frames = [(c, a + b) for c, a, b in zip(cs, clean, caustics)]
    return cloud, frames, caustics


SMALL = dict(steps_per_iteration=20, warmup_steps=30)


def test_zero_residual_converges_immediately(scene):
    cloud, frames, _ = scene
    exact = [(c, render(cloud, c, W, H)) for c, _ in frames]
    rc = RecurrenceConfig(threshold=1e-6, **SMALL)
    res = train_recurrent(exact, cloud, rc)
    assert res.state.converged and res.state.iteration == 1
    assert max(np.max(np.abs(c)) for c in res.caustics) < rc.threshold


def test_infinite_threshold_gives_single_estimate(scene):
    cloud, frames, _ = scene
    init = perturb_cloud(cloud, 0.3)
    rc = RecurrenceConfig(threshold=float("inf"), **SMALL)
    res = train_recurrent(frames, init, rc)
    assert res.state.iteration == 1 and res.state.converged
    assert len(res.losses) == rc.warmup_steps
    trainer, _ = warm_up(frames, init, rc.warmup_steps)
    mask = build_mask(W, H, rc.k)
    for (cam, img), pred, C in zip(frames, trainer.render_all(), res.caustics):
        np.testing.assert_array_equal(C, lowpass_reconstruct(img - pred, mask))


@pytest.fixture(scope="module")
def capped(scene):
    cloud, frames, _ = scene
    rc = RecurrenceConfig(threshold=1e-9, max_iterations=4, **SMALL)
    records = []
    res = train_recurrent(frames, perturb_cloud(cloud, 0.3), rc, progress=records.append)
    return rc, res, records


def test_cap_stops_without_convergence(capped):
    rc, res, records = capped
    assert not res.state.converged
    assert res.state.iteration == rc.max_iterations == len(res.state.change_history)
    assert len(res.losses) == rc.warmup_steps + (rc.max_iterations - 1) * rc.steps_per_iteration


def test_history_matches_progress_records(capped):
    rc, res, records = capped
    assert [r["iteration"] for r in records] == list(range(1, rc.max_iterations + 1))
    assert [r["delta"] for r in records] == res.state.change_history
    assert records[-1]["mean_loss"] is None
    assert all(isinstance(r["mean_loss"], float) for r in records[:-1])


def test_caustics_lie_in_the_passband(capped):
    rc, res, _ = capped
    mask = build_mask(W, H, rc.k)
    for C in res.caustics:
        np.testing.assert_allclose(lowpass_reconstruct(C, mask), C, atol=1e-9, rtol=0)


def test_last_entry_below_threshold_iff_converged(scene, capped):
    cloud, frames, _ = scene
    for threshold in (1e-9, 0.5):
        res = train_recurrent(frames, perturb_cloud(cloud, 0.3),
                              RecurrenceConfig(threshold=threshold, max_iterations=3, **SMALL))
        assert (res.state.change_history[-1] < threshold) == res.state.converged


def test_deterministic_change_history(scene, capped):
    cloud, frames, _ = scene
    rc, res, _ = capped
    again = train_recurrent(frames, perturb_cloud(cloud, 0.3), rc)
    assert again.state.change_history == res.state.change_history


def test_first_estimate_tracks_injected_caustic(scene):
    cloud, frames, caustics = scene
    # model equal to the clean scene: the first estimate is the low-passed caustic itself
    res = train_recurrent(frames, cloud, RecurrenceConfig(threshold=float("inf"), steps_per_iteration=1,
                                                          warmup_steps=0))
    mask = build_mask(W, H, 9)
    for C, gt in zip(res.caustics, caustics):
        np.testing.assert_allclose(C, lowpass_reconstruct(gt, mask), atol=1e-12)


def test_optimizer_state_carries_over(scene):
    cloud, frames, _ = scene
    trainer, _ = warm_up(frames, perturb_cloud(cloud, 0.3), 10)
    recur(trainer, RecurrenceConfig(threshold=1e-9, max_iterations=3, steps_per_iteration=7))
    assert trainer.adam.t == trainer.step_count == 10 + 2 * 7


def test_non_convergence_is_logged(scene, caplog):
    cloud, frames, _ = scene
    with caplog.at_level(logging.WARNING, logger="recgs"):
        res = train_recurrent(frames, cloud, RecurrenceConfig(threshold=1e-12, max_iterations=2, **SMALL))
    assert not res.state.converged
    assert any("did not converge" in r.getMessage() for r in caplog.records)


def test_json_lines_progress():
    buf = stdio.StringIO()
    emit = json_lines(buf)
    emit(dict(iteration=1, delta=0.5, mean_loss=None))
    assert json.loads(buf.getvalue()) == dict(iteration=1, delta=0.5, mean_loss=None)


def test_empty_frames_rejected(scene):
    with pytest.raises(ValueError):
        train_recurrent([], scene[0], RecurrenceConfig(**SMALL))


def test_divergence_propagates(scene, monkeypatch):
    cloud, frames, _ = scene
    monkeypatch.setattr(SplatTrainer, "step", lambda self: float("nan"))
    with pytest.raises(DivergenceError):
        train_recurrent(frames, perturb_cloud(cloud, 0.3), RecurrenceConfig(**SMALL))
