"""Position error bound from the range-only Fisher information."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import io
from .env import Scene

COND_LIMIT = 1e12


class SingularGeometryError(np.linalg.LinAlgError):
    """The Fisher information of the visible references is (near) singular."""


def geometry_matrix(q, anchors) -> np.ndarray:
    """Unit vectors from each anchor to the UE, one row per anchor, shape (R, 3)."""
    q = np.asarray(q, dtype=float)
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    if len(anchors) == 0:
        raise ValueError("at least one visible anchor is required")
    diff = q[None, :] - anchors
    norm = np.linalg.norm(diff, axis=1)
    if np.any(norm == 0):
        raise ValueError("UE position coincides with an anchor")
    return diff / norm[:, None]


def peb_2d(q, anchors, sigma_r: float) -> float:
    """sigma_r * sqrt of the x and y diagonal entries of (H^T H)^-1.

    The full 3x3 matrix is inverted first; only then are the horizontal
    entries taken.
    """
    H = geometry_matrix(q, anchors)
    G = H.T @ H
    cond = np.linalg.cond(G)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularGeometryError(f"geometry matrix condition number {cond:.3g} exceeds {COND_LIMIT:g}")
    inv = np.linalg.inv(G)
    return float(sigma_r * np.sqrt(inv[0, 0] + inv[1, 1]))


def fim_condition(q, anchors) -> float:
    H = geometry_matrix(q, anchors)
    return float(np.linalg.cond(H.T @ H))


@dataclass
class PebMap:
    values: np.ndarray  # NaN where singular
    singular: np.ndarray
    condition: np.ndarray
    sigma_r: float

    @property
    def mean(self) -> float:
        """Average over non-singular cells."""
        return float(np.mean(self.values[~self.singular]))


def peb_map(scene: Scene, sigma_r: float, path=None, meta=None) -> PebMap:
    K = scene.K
    values = np.full(K, np.nan)
    singular = np.zeros(K, dtype=bool)
    cond = np.full(K, np.inf)
    cells = scene.grid.cells
    refs = scene.placement.refs
    for i in range(K):
        vis = scene.vis.visible(i)
        if len(vis) == 0:
            singular[i] = True
            continue
        cond[i] = fim_condition(cells[i], refs[vis])
        try:
            values[i] = peb_2d(cells[i], refs[vis], sigma_r)
        except SingularGeometryError:
            singular[i] = True
    out = PebMap(values, singular, cond, float(sigma_r))
    if path is not None:
        header = {"sigma_r": sigma_r, "placement": scene.placement.placement_id, **(meta or {})}
        io.write_columns(path, {"x": scene.grid.xy[:, 0], "y": scene.grid.xy[:, 1],
                                "peb_m": values, "flag": np.where(singular, "singular", "ok")}, header)
    return out
