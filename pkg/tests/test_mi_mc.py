import math

import numpy as np
import pytest

from mineloc.env import ReferencePlacement, Room, Scene
from mineloc.measure import NoiseModel, sample_measurements
from mineloc.mi_mc import exact_mi, mc_mi, mi_map

from oracles import discretized_mi

GAUSS = NoiseModel("gaussian", 0.2)


def test_exact_mi_values():
    assert exact_mi([[0.4, 0.1], [0.1, 0.4]]).value == pytest.approx(0.8 * math.log(1.6) + 0.2 * math.log(0.4))
    assert exact_mi([[0.4, 0.1], [0.1, 0.4]]).value == pytest.approx(0.19274, abs=1e-5)
    px, pz = np.array([0.2, 0.8]), np.array([0.1, 0.3, 0.6])
    assert abs(exact_mi(np.outer(px, pz)).value) < 1e-15
    assert exact_mi(np.eye(7) / 7).value == pytest.approx(math.log(7), rel=1e-14)


def test_exact_mi_rejects_bad_pmf():
    with pytest.raises(ValueError):
        exact_mi([[0.5, 0.6], [0.0, 0.0]])
    with pytest.raises(ValueError):
        exact_mi([[-0.1, 0.6], [0.5, 0.0]])


def _two_cell(dx):
    room = Room(np.array([[0, 0], [0.4, 0], [0.4, 0.2], [0, 0.2]]))
    return Scene.build(room, ReferencePlacement.from_xy([[0.2 + dx, 0.1]], 2.5))


def test_two_cell_equidistant_is_zero():
    # Centers 0.1 and 0.3 are mirror images of 0.2 only up to rounding.
    assert abs(mc_mi(_two_cell(0.0), GAUSS, D=200, seed=0).value) < 1e-12


def test_two_cell_separated_is_log2():
    room = Room(np.array([[0, 0], [0.4, 0], [0.4, 0.2], [0, 0.2]]))
    scene = Scene.build(room, ReferencePlacement.from_xy([[0.1, 0.1]], 2.5))
    noise = NoiseModel("gaussian", 1e-3)
    est = mc_mi(scene, noise, D=500, seed=0).value
    assert est == pytest.approx(math.log(2), rel=0.02)
    assert est == pytest.approx(discretized_mi(scene.ranges[:, 0], 1e-3), rel=0.02)


def test_strip_against_discretized_oracle(strip_scene):
    est = mc_mi(strip_scene, GAUSS, D=4000, seed=1).value
    ref = discretized_mi(strip_scene.ranges[:, 0], 0.2)
    assert abs(est - ref) / ref < 0.02


def test_bounds_and_zero_noise(corner_scene):
    log_k = math.log(400)
    e = mc_mi(corner_scene, GAUSS, D=50, seed=0)
    assert 0 <= e.value <= log_k + 1e-9
    sharp = mc_mi(corner_scene, NoiseModel("gaussian", 1e-6), D=5, seed=0).value
    assert sharp == pytest.approx(log_k, rel=0.01)


def test_zero_range_is_exactly_zero(square):
    pl = ReferencePlacement.from_xy([[0.55, 0.55], [3.45, 0.55], [0.55, 3.45], [3.45, 3.45]], 2.5,
                                    sensing_range=0.0)
    est = mc_mi(Scene.build(square, pl), GAUSS, D=3, seed=0)
    assert est.value == 0.0
    assert np.all(est.per_cell == 0.0)


def test_noise_monotone(corner_scene):
    lo = mc_mi(corner_scene, NoiseModel("gaussian", 0.05), D=100, seed=4).value
    hi = mc_mi(corner_scene, NoiseModel("gaussian", 0.4), D=100, seed=4).value
    assert lo > hi


def test_uniform_kinds_finite(corner_scene):
    for kind in ("uniform", "biased"):
        v = mc_mi(corner_scene, NoiseModel(kind, 0.2), D=20, seed=0).value
        assert 0 < v <= math.log(400)


def test_reuse_measurements_matches(corner_scene):
    ms = sample_measurements(corner_scene, GAUSS, 30, seed=9)
    a = mc_mi(corner_scene, GAUSS, D=30, seed=9)
    b = mc_mi(corner_scene, GAUSS, measurements=ms)
    np.testing.assert_array_equal(a.per_cell, b.per_cell)


def test_chunking_invariant(corner_scene):
    a = mc_mi(corner_scene, GAUSS, D=40, seed=2, chunk=7).per_cell
    b = mc_mi(corner_scene, GAUSS, D=40, seed=2, chunk=64).per_cell
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_seed_stability(corner_scene):
    a = mc_mi(corner_scene, GAUSS, D=100, seed=0)
    b = mc_mi(corner_scene, GAUSS, D=100, seed=1)
    se = math.hypot(a.per_cell.std(), b.per_cell.std()) / math.sqrt(400)
    assert abs(a.value - b.value) < 3 * se


def test_map(corner_scene, tmp_path):
    e = mc_mi(corner_scene, GAUSS, D=20, seed=0)
    t = mi_map(e, corner_scene.grid, tmp_path / "m.csv")
    assert abs(t[:, 2].mean() - e.value) < 1e-10
    assert (tmp_path / "m.csv").read_text().splitlines()[-401] == "x,y,c_x"


def test_uniform_channel_map_constant(square):
    pl = ReferencePlacement.from_xy([[0.55, 0.55]], 2.5, sensing_range=0.0)
    e = mc_mi(Scene.build(square, pl), GAUSS, D=2, seed=0)
    assert np.ptp(mi_map(e, Scene.build(square, pl).grid)[:, 2]) == 0


def test_bits(corner_scene):
    e = mc_mi(corner_scene, GAUSS, D=5, seed=0)
    assert e.bits == pytest.approx(e.value / math.log(2))


def test_visibility_boundaries_carry_information(lroom):
    # Cells where the detectable set changes are easier to tell apart.
    pl = ReferencePlacement.from_xy([[1, 1], [4, 1], [1, 4], [8, 1], [1, 8], [4, 4]], 2.5)
    scene = Scene.build(lroom, pl)
    e = mc_mi(scene, GAUSS, D=5, seed=0)
    assert np.all(np.isfinite(e.per_cell))
    assert e.value <= math.log(scene.K) + 1e-9
