import numpy as np
import pytest

from mineloc.env import ReferencePlacement, Scene
from mineloc.peb import SingularGeometryError, geometry_matrix, peb_2d, peb_map

from oracles import peb_oracle

ANCHORS = np.array([[0.5, 0.5, 2.5], [3.5, 0.5, 2.5], [0.5, 3.5, 2.5], [3.5, 3.5, 2.5]])
PEB_CENTER = 0.30199337741083004  # frozen from the cofactor oracle below


def test_geometry_matrix():
    np.testing.assert_allclose(geometry_matrix((0, 0, 0), [[1, 0, 0]]), [[-1, 0, 0]])
    a = geometry_matrix((0.3, 0.2, 0.1), [[1, 2, 3]])
    b = geometry_matrix((0.3 * 5 - 4, 0.2 * 5 - 8, 0.1 * 5 - 12), [[1 * 5 - 4, 2 * 5 - 8, 3 * 5 - 12]])
    np.testing.assert_allclose(a, b)
    H = geometry_matrix((2, 2, 0.1), ANCHORS)
    np.testing.assert_allclose(H[0, :2], -H[3, :2])
    np.testing.assert_allclose(H[1, :2], -H[2, :2])


def test_center_value_regression():
    assert peb_oracle((2, 2, 0.1), ANCHORS, 0.2) == pytest.approx(PEB_CENTER, rel=1e-12)
    assert peb_2d((2, 2, 0.1), ANCHORS, 0.2) == pytest.approx(PEB_CENTER, rel=1e-12)


def test_matches_oracle_everywhere(corner_scene):
    pm = peb_map(corner_scene, 0.2)
    for i in range(0, 400, 13):
        assert pm.values[i] == pytest.approx(peb_oracle(corner_scene.grid.cells[i], ANCHORS, 0.2), rel=1e-10)


def test_sigma_linear():
    assert peb_2d((1, 3, 0.1), ANCHORS, 0.4) == pytest.approx(2 * peb_2d((1, 3, 0.1), ANCHORS, 0.2), rel=1e-14)


def test_single_anchor_singular():
    with pytest.raises(SingularGeometryError):
        peb_2d((1, 1, 0.1), ANCHORS[:1], 0.2)


def test_map(corner_scene, tmp_path):
    pm = peb_map(corner_scene, 0.2, tmp_path / "p.csv")
    assert np.all(np.isfinite(pm.values)) and not pm.singular.any()
    np.testing.assert_allclose(peb_map(corner_scene, 0.4).values, 2 * pm.values, rtol=1e-14)
    assert "x,y,peb_m,flag" in (tmp_path / "p.csv").read_text()


def test_adding_anchor_never_hurts(corner_scene):
    q = corner_scene.grid.cells
    extra = np.array([2.0, 1.0, 2.5])
    for i in range(0, 400, 17):
        base = peb_2d(q[i], ANCHORS[:3], 0.2)
        assert peb_2d(q[i], np.vstack([ANCHORS[:3], extra]), 0.2) <= base + 1e-9


def test_singular_cells_flagged(square):
    # Collinear anchors at equal height: the x-y information collapses along the line.
    pl = ReferencePlacement.from_xy([[2.0, 1.0], [2.0, 2.0], [2.0, 3.0]], 2.5, sensing_range=0.0)
    pm = peb_map(Scene.build(square, pl), 0.2)
    assert pm.singular.all() and np.isnan(pm.values).all()
