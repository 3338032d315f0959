from dataclasses import replace

import numpy as np
import pytest

from recgs.core import cloud_violations
from recgs.metrics import relative_l2
from recgs.spectral import build_mask, lowpass_reconstruct
from recgs.splat import coverage
from recgs.synth import (OBS_MAX, BenchmarkSpec, CausticFieldSpec, SceneSpec, TrajectorySpec, footprint_overlap,
                         make_benchmark, make_caustic, make_scene, make_trajectory, perturb_cloud)

W, H = 256, 192


@pytest.fixture(scope="module")
def benchmark():
    return make_benchmark(BenchmarkSpec())


def test_single_gaussian_flat_scene_at_origin():
    cloud, _ = make_scene(SceneSpec(n_gaussians=1))
    assert len(cloud) == 1
    np.testing.assert_array_equal(cloud.positions, [[0.0, 0.0, 0.0]])


def test_scene_is_deterministic():
    a, _ = make_scene(SceneSpec(n_gaussians=80, relief=0.2, seed=4))
    b, _ = make_scene(SceneSpec(n_gaussians=80, relief=0.2, seed=4))
    for k, v in a.arrays().items():
        np.testing.assert_array_equal(v, b.arrays()[k])
    c, _ = make_scene(SceneSpec(n_gaussians=80, relief=0.2, seed=5))
    assert not np.array_equal(a.colors, c.colors)


def test_scene_has_exact_count_and_is_valid():
    for n in (2, 37, 500):
        cloud, _ = make_scene(SceneSpec(n_gaussians=n))
        assert len(cloud) == n and cloud_violations(cloud) == []


def test_flat_scene_lies_on_plane():
    cloud, _ = make_scene(SceneSpec(n_gaussians=50))
    assert not np.any(cloud.positions[:, 2])
    high, _ = make_scene(SceneSpec(n_gaussians=50, relief=0.3))
    low, _ = make_scene(SceneSpec(n_gaussians=50, relief=0.15))
    assert np.any(high.positions[:, 2])
    np.testing.assert_allclose(high.positions[:, 2], 2 * low.positions[:, 2], atol=1e-15)
    np.testing.assert_array_equal(high.positions[:, :2], low.positions[:, :2])


def test_benchmark_coverage(benchmark):
    w = np.concatenate([coverage(benchmark.cloud, c, W, H).ravel() for c in benchmark.cameras])
    assert np.mean(w > 0.5) >= 0.95


def test_single_frame_trajectory_is_nadir_above_center():
    cams = make_trajectory(TrajectorySpec(n_frames=1, center=(0.3, -0.2), altitude=1.5))
    assert len(cams) == 1
    np.testing.assert_allclose(cams[0].center, [0.3, -0.2, 1.5], atol=1e-12)
    np.testing.assert_allclose(cams[0].optical_axis, [0, 0, -1], atol=1e-12)


def test_consecutive_overlap_in_range():
    spec = TrajectorySpec()
    cams = make_trajectory(spec)
    assert len(cams) == 24
    ov = [footprint_overlap(a, b, spec) for a, b in zip(cams, cams[1:])]
    assert min(ov) >= 0.6 and max(ov) <= 0.9, ov


@pytest.mark.parametrize("mode", ["lawnmower", "arc", "static"])
def test_cameras_look_down(mode):
    for cam in make_trajectory(TrajectorySpec(mode=mode)):
        angle = np.degrees(np.arccos(np.clip(-cam.optical_axis[2], -1, 1)))
        assert angle <= 20.0


def test_trajectory_is_deterministic():
    a, b = make_trajectory(TrajectorySpec(mode="arc")), make_trajectory(TrajectorySpec(mode="arc"))
    assert a == b


def test_zero_amplitude_is_zero_image():
    assert not np.any(make_caustic(CausticFieldSpec(amplitude=0.0), 3, 32, 24))
    assert not np.any(make_caustic(CausticFieldSpec(amplitude=0.0, mode="refraction"), 3, 32, 24))


@pytest.mark.parametrize("f", [1.0, 2.0, 4.0])
def test_single_wave_along_x_is_column_constant(f):
    spec = CausticFieldSpec(num_components=1, spatial_frequency_range=(f, f), orientation_range=(0.0, 0.0),
                            chroma_jitter=0.0)
    img = make_caustic(spec, 2, 64, 16)
    np.testing.assert_allclose(img, np.broadcast_to(img[:1], img.shape), atol=1e-15)
    period = int(64 / f)
    np.testing.assert_allclose(img[:, period:], img[:, :-period], atol=1e-12)
    assert np.ptp(img) > 0


def test_caustic_is_deterministic_and_animated():
    spec = CausticFieldSpec()
    np.testing.assert_array_equal(make_caustic(spec, 5, W, H), make_caustic(spec, 5, W, H))
    assert not np.allclose(make_caustic(spec, 5, W, H), make_caustic(spec, 6, W, H))


def test_caustic_peak_bounded_by_amplitude():
    for mode in ("sinusoid-mixture", "refraction"):
        img = make_caustic(CausticFieldSpec(mode=mode, amplitude=0.3), 1, 64, 48)
        assert np.max(np.abs(img)) <= 0.3 + 1e-12
        assert np.all(np.isfinite(img))


def test_in_band_caustics_survive_the_mask():
    mask = build_mask(W, H, 9)
    for f in range(0, 24, 5):
        C = make_caustic(CausticFieldSpec(), f, W, H)
        assert relative_l2(lowpass_reconstruct(C, mask), C) < 0.05


def test_out_of_band_caustics_lose_most_energy():
    mask = build_mask(W, H, 9)
    spec = CausticFieldSpec(spatial_frequency_range=(6.0, 10.0))
    for f in range(3):
        C = make_caustic(spec, f, W, H)
        kept = np.sum(lowpass_reconstruct(C, mask) ** 2) / np.sum(C ** 2)
        assert kept < 0.5


def test_observation_decomposition_is_exact(benchmark):
    for obs, clean, C in zip(benchmark.observations, benchmark.clean, benchmark.caustics):
        unclamped = (clean + C >= 0) & (clean + C <= OBS_MAX)
        diff = np.abs((obs - C) - clean)[unclamped]
        assert np.max(diff) <= 4 * np.finfo(np.float64).eps


def test_benchmark_clamps_under_one_percent(benchmark):
    assert benchmark.meta["clamped_fraction"] < 0.01


def test_benchmark_shape(benchmark):
    assert len(benchmark.cameras) == 24 and len(benchmark.cloud) == 500
    assert benchmark.observations[0].shape == (H, W, 3)
    assert cloud_violations(benchmark.init_cloud) == []


def test_perturbation_is_seeded():
    cloud, _ = make_scene(SceneSpec(n_gaussians=30))
    a, b = perturb_cloud(cloud, 0.2, seed=1), perturb_cloud(cloud, 0.2, seed=1)
    np.testing.assert_array_equal(a.positions, b.positions)
    assert not np.array_equal(a.positions, cloud.positions)


def test_spec_dict_round_trip():
    spec = BenchmarkSpec(caustic=CausticFieldSpec(amplitude=0.1, orientation_range=(0.0, 1.0)))
    assert BenchmarkSpec.from_dict(spec.as_dict()) == spec
    partial = BenchmarkSpec.from_dict({"caustic": {"amplitude": 0.0}})
    assert partial == replace(BenchmarkSpec(), caustic=replace(CausticFieldSpec(), amplitude=0.0))


@pytest.mark.parametrize("bad", [dict(caustic=dict(amplitude=-1.0)), dict(caustic=dict(mode="fft")),
                                 dict(caustic=dict(spatial_frequency_range=[0.0, 1.0])),
                                 dict(scene=dict(n_gaussians=0)), dict(trajectory=dict(mode="spiral")),
                                 dict(trajectory=dict(overlap=1.0)), dict(unknown=1)])
def test_invalid_specs_rejected(bad):
    with pytest.raises((ValueError, TypeError)):
        BenchmarkSpec.from_dict(bad)
