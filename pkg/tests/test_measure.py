import math

import numpy as np
import pytest

from mineloc.env import ReferencePlacement, Scene, build_grid
from mineloc.measure import (MASK, NoiseModel, likelihood, log_likelihood, sample_measurements,
                             sample_realization, true_range)


def test_true_range():
    assert true_range((0, 0, 0), (3, 4, 0)) == 5.0
    assert true_range((1, 2, 3), (1, 2, 3)) == 0.0
    assert true_range((2, 2, 0.1), (2, 2, 2.5)) == pytest.approx(2.4, abs=1e-15)


def test_noise_aliases_and_validation():
    assert NoiseModel("biased", 0.2).kind == "uniform_biased"
    with pytest.raises(ValueError):
        NoiseModel("laplace", 0.2)
    with pytest.raises(ValueError):
        NoiseModel("gaussian", -1.0)


def test_near_zero_noise(corner_scene):
    ms = sample_measurements(corner_scene, NoiseModel("gaussian", 1e-12), 3, seed=1)
    assert np.abs(ms.values - corner_scene.ranges[None]).max() < 1e-9


def test_uniform_support(corner_scene):
    ms = sample_measurements(corner_scene, NoiseModel("uniform", 0.2), 20, seed=2)
    dev = ms.values - corner_scene.ranges[None]
    assert np.abs(dev).max() <= math.sqrt(3) * 0.2
    biased = sample_measurements(corner_scene, NoiseModel("biased", 0.2), 20, seed=2).values
    b = biased - corner_scene.ranges[None]
    assert b.min() >= 0 and b.max() <= 0.4
    assert abs(b.mean() - 0.2) < 0.01


def test_gaussian_moments(corner_scene):
    noise = NoiseModel("gaussian", 0.2)
    e = np.array([sample_realization(corner_scene, noise, 7, o)[0, 0] for o in range(10_000)])
    e -= corner_scene.ranges[0, 0]
    assert abs(e.mean()) < 0.01
    assert 0.19 <= e.std() <= 0.21


def test_reproducible_blocks(corner_scene):
    noise = NoiseModel("gaussian", 0.2)
    a = sample_measurements(corner_scene, noise, 5, seed=11)
    b = sample_measurements(corner_scene, noise, 5, seed=11)
    np.testing.assert_array_equal(a.values, b.values)
    # Realization 3 does not depend on how many others were drawn.
    np.testing.assert_array_equal(a.values[3], sample_realization(corner_scene, noise, 11, 3))
    assert not np.array_equal(a.values, sample_measurements(corner_scene, noise, 5, seed=12).values)


def test_masking(lroom):
    grid = build_grid(lroom)
    scene = Scene(lroom, grid, ReferencePlacement.from_xy([[1, 1], [9, 1], [1, 9]], 2.5))
    m = sample_realization(scene, NoiseModel("gaussian", 0.2), 0, 0)
    assert np.all((m == MASK) == ~scene.vis.mask)
    assert np.all(m[scene.vis.mask] > 0)


def _one_ref_scene():
    from mineloc.env import Room
    room = Room(np.array([[0, 0], [0.2, 0], [0.2, 0.2], [0, 0.2]]))
    return Scene.build(room, ReferencePlacement.from_xy([[0.1, 0.1]], 2.5))


def test_likelihood_values():
    scene = _one_ref_scene()
    r = scene.ranges[0]
    assert likelihood(r, 0, scene, NoiseModel("gaussian", 0.2)) == pytest.approx(1.99471, abs=1e-5)
    u = NoiseModel("uniform", 0.2)
    edge = math.sqrt(3) * 0.2
    assert likelihood(r + edge, 0, scene, u) == pytest.approx(1.44338, abs=1e-5)
    assert likelihood(r + edge + 1e-6, 0, scene, u) == 0.0


def test_likelihood_mask_mismatch(lroom):
    grid = build_grid(lroom)
    scene = Scene(lroom, grid, ReferencePlacement.from_xy([[1, 1], [9, 1], [1, 9], [9, 4]], 2.5))
    i = int(np.flatnonzero(scene.vis.counts < 4)[0])
    m = scene.ranges[i].copy()
    m[~scene.vis.mask[i]] = MASK
    noise = NoiseModel("gaussian", 0.2)
    assert likelihood(m, i, scene, noise) > 0
    hidden = np.flatnonzero(~scene.vis.mask[i])[0]
    m[hidden] = 3.0
    assert likelihood(m, i, scene, noise) == 0.0
    assert log_likelihood(m, i, scene, noise) == -np.inf


def test_gaussian_density_integrates_to_one():
    noise = NoiseModel("gaussian", 0.2)
    x = np.linspace(-3, 3, 600_001)
    assert abs(np.trapezoid(noise.density(x), x) - 1) < 1e-6


def test_own_cell_likelihood_positive(corner_scene):
    for kind in ("gaussian", "uniform", "biased"):
        noise = NoiseModel(kind, 0.2)
        m = sample_realization(corner_scene, noise, 3, 0)
        for i in (0, 57, 399):
            assert likelihood(m[i], i, corner_scene, noise) > 0
