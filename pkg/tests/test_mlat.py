import warnings

import numpy as np
import pytest

from mineloc.env import ReferencePlacement, Scene
from mineloc.measure import MeasurementSet, NoiseModel, sample_measurements
from mineloc.mlat import DegenerateGeometryError, linear_init, locate, refine_lm, rmse_map
from mineloc.peb import peb_map

from oracles import grid_search_2d

ANCHORS = np.array([[0.5, 0.5, 2.5], [3.5, 0.5, 2.5], [0.5, 3.5, 2.5], [3.5, 3.5, 2.5]])
Z0 = 0.1


def _ranges(q, anchors=ANCHORS):
    return np.linalg.norm(anchors - np.array([q[0], q[1], Z0]), axis=1)


def test_linear_init_exact():
    np.testing.assert_allclose(linear_init(ANCHORS, _ranges((2, 2)), Z0), [2, 2], atol=1e-9)


def test_linear_init_collinear():
    with pytest.raises(DegenerateGeometryError):
        linear_init(ANCHORS[[0, 1]] * [1, 1, 1], _ranges((2, 2), ANCHORS[[0, 1]]), Z0)
    line = np.array([[0.5, 1, 2.5], [1.5, 1, 2.5], [3, 1, 2.5]])
    with pytest.raises(DegenerateGeometryError):
        linear_init(line, _ranges((2, 2), line), Z0)


def test_translation_equivariance():
    q, shift = np.array([1.3, 2.7]), np.array([5.0, -3.0, 0.0])
    rng = np.random.default_rng(0)
    d = _ranges(q) + rng.normal(0, 0.1, 4)
    a = locate(ANCHORS, d, Z0).q
    b = locate(ANCHORS + shift, d, Z0).q
    np.testing.assert_allclose(b - a, shift[:2], atol=1e-9)
    np.testing.assert_allclose(linear_init(ANCHORS + shift, d, Z0) - linear_init(ANCHORS, d, Z0),
                               shift[:2], atol=1e-9)


def test_lm_at_truth():
    est = refine_lm([2.3, 1.1], ANCHORS, _ranges((2.3, 1.1)), Z0)
    assert est.residual < 1e-20 and est.iterations <= 1 and est.converged


def test_lm_offset_start_vs_grid_search():
    truth = np.array([1.7, 2.9])
    d = _ranges(truth)
    est = refine_lm(truth + [0.5, 0.0], ANCHORS, d, Z0)
    assert np.linalg.norm(est.q - truth) < 1e-6
    ref = grid_search_2d(ANCHORS, d, Z0, truth + [0.3, -0.2])
    assert np.linalg.norm(est.q - ref) < 2e-6


def test_lm_noisy_matches_grid_search():
    rng = np.random.default_rng(5)
    for _ in range(3):
        truth = rng.uniform(0.5, 3.5, 2)
        d = _ranges(truth) + rng.normal(0, 0.2, 4)
        est = locate(ANCHORS, d, Z0)
        ref = grid_search_2d(ANCHORS, d, Z0, est.q)
        cost = lambda p: np.sum((_ranges(p) - d) ** 2)
        assert cost(est.q) <= cost(ref) + 1e-12


def test_cost_history_monotone():
    d = _ranges((0.8, 3.1)) + np.array([0.2, -0.3, 0.1, 0.25])
    est = refine_lm([3.0, 0.5], ANCHORS, d, Z0)
    assert np.all(np.diff(est.cost_history) < 0)


def test_consistency_as_noise_vanishes(corner_scene):
    meds = []
    for s in (0.1, 0.01, 0.001):
        ms = sample_measurements(corner_scene, NoiseModel("gaussian", s), 3, seed=0)
        rm = rmse_map(corner_scene, ms)
        meds.append(np.median(rm.rmse))
    assert meds[0] > meds[1] > meds[2]


def test_zero_noise_rmse(corner_scene):
    ms = MeasurementSet(corner_scene.ranges[None].copy(), 0, NoiseModel("gaussian", 0.2))
    rm = rmse_map(corner_scene, ms)
    assert rm.rmse.max() < 1e-9


def test_rmse_close_to_peb(corner_scene, tmp_path):
    noise = NoiseModel("gaussian", 0.2)
    rm = rmse_map(corner_scene, sample_measurements(corner_scene, noise, 300, seed=0), tmp_path / "r.csv")
    pm = peb_map(corner_scene, 0.2)
    i = corner_scene.grid.lookup(2.1, 2.1)
    assert rm.rmse[i] == pytest.approx(pm.values[i], rel=0.25)
    assert rm.converged == 1.0
    text = (tmp_path / "r.csv").read_text()
    assert "global_rmse_m" in text and "x,y,rmse_m,n_valid" in text


def test_biased_noise_shows_bias(corner_scene):
    ms = sample_measurements(corner_scene, NoiseModel("biased", 0.2), 50, seed=0)
    rm = rmse_map(corner_scene, ms)
    assert np.linalg.norm(rm.mean_error, axis=1).mean() > 0.01


def test_reproducible(corner_scene):
    noise = NoiseModel("gaussian", 0.2)
    a = rmse_map(corner_scene, sample_measurements(corner_scene, noise, 5, seed=3)).rmse
    b = rmse_map(corner_scene, sample_measurements(corner_scene, noise, 5, seed=3)).rmse
    np.testing.assert_array_equal(a, b)


def test_under_covered_cells_flagged(lroom):
    pl = ReferencePlacement.from_xy([[1, 1], [9, 1], [1, 9]], 2.5)
    scene = Scene.build(lroom, pl)
    ms = sample_measurements(scene, NoiseModel("gaussian", 0.2), 2, seed=0)
    with pytest.warns(RuntimeWarning):
        rm = rmse_map(scene, ms)
    assert rm.flagged.any() and np.isnan(rm.rmse[rm.flagged]).all()
    assert np.isfinite(rm.global_rmse)
