"""Snapshot multilateration: linear pseudoinverse start, Levenberg-Marquardt refinement.

The UE height z0 is known, so only (x, y) are estimated.  Both stages are
vectorized over many snapshots that share one set of visible anchors, which
is how :func:`rmse_map` processes a whole grid of realizations at once.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import io
from .env import Scene
from .measure import MeasurementSet

LM_DEFAULTS = dict(lam0=1e-3, up=10.0, down=10.0, max_iter=100, gtol=1e-9, xtol=1e-12)


class DegenerateGeometryError(np.linalg.LinAlgError):
    pass


@dataclass
class PositionEstimate:
    q: np.ndarray
    residual: float
    iterations: int
    converged: bool
    cost_history: list = field(default_factory=list)


def _anchor_xy(anchors, z1=None):
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    if anchors.shape[1] == 3:
        if z1 is not None and not np.allclose(anchors[:, 2], z1):
            raise ValueError("all anchors must share the reference height z1")
        if not np.allclose(anchors[:, 2], anchors[0, 2]):
            raise ValueError("anchors at different heights are not supported")
        return anchors[:, :2], float(anchors[0, 2])
    return anchors, z1


def linear_system(anchors_xy, d, z0: float, z1: float):
    """``A`` (R, 3) and ``b`` (..., R) for the unknown [x^2 + y^2, x, y]."""
    xy = np.asarray(anchors_xy, dtype=float)
    d = np.asarray(d, dtype=float)
    A = np.column_stack([np.ones(len(xy)), -2 * xy[:, 0], -2 * xy[:, 1]])
    b = d ** 2 - xy[:, 0] ** 2 - xy[:, 1] ** 2 - z1 ** 2 - z0 ** 2 + 2 * z0 * z1
    return A, b


def _pinv_checked(A):
    if np.linalg.matrix_rank(A) < 3:
        raise DegenerateGeometryError("anchors are collinear in the xy-plane or fewer than three")
    return np.linalg.pinv(A)


def linear_init(anchors, d, z0: float, z1: float | None = None) -> np.ndarray:
    """Closed-form (x, y) from the pseudoinverse of the linearized range equations.

    ``d`` may be (R,) or a batch (n, R); the result is (2,) or (n, 2).
    """
    xy, z1 = _anchor_xy(anchors, z1)
    if z1 is None:
        raise ValueError("z1 is required when anchors are given in 2D")
    A, b = linear_system(xy, d, z0, z1)
    sol = b @ _pinv_checked(A).T
    return sol[..., 1:]


def _residuals(x, anchors3, d, z0):
    diff = np.empty(x.shape[:1] + anchors3.shape)
    diff[..., 0] = x[:, None, 0] - anchors3[None, :, 0]
    diff[..., 1] = x[:, None, 1] - anchors3[None, :, 1]
    diff[..., 2] = z0 - anchors3[None, :, 2]
    rho = np.sqrt(np.sum(diff ** 2, axis=-1))
    r = rho - d
    J = diff[..., :2] / rho[..., None]
    return r, J


def refine_lm_batch(x0, anchors, d, z0: float, lam0=1e-3, up=10.0, down=10.0,
                    max_iter=100, gtol=1e-9, xtol=1e-12, history=False):
    """Levenberg-Marquardt on sum_j (||p_j - [x, y, z0]|| - d_j)^2 for n problems.

    Each problem keeps its own damping: divided by ``down`` after an
    accepted step, multiplied by ``up`` after a rejected one.  A step is
    accepted only if it strictly lowers the cost.  A problem stops when the
    gradient norm reaches ``gtol``, or when a rejected step is shorter than
    ``xtol * (1 + |x|)``: the cost can then no longer resolve the remaining
    gradient and the point is stationary to machine precision.

    Returns (x, cost, iterations, converged[, cost_history_of_problem_0]).
    """
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    x = np.array(x0, dtype=float, copy=True).reshape(-1, 2)
    d = np.asarray(d, dtype=float).reshape(len(x), -1)
    n = len(x)
    r, J = _residuals(x, anchors, d, z0)
    F = np.sum(r ** 2, axis=1)
    if not np.all(np.isfinite(F)):
        raise FloatingPointError("non-finite residual at the initial point")
    g = np.einsum("nr,nrk->nk", r, J)
    lam = np.full(n, float(lam0))
    iters = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    stalled = np.zeros(n, dtype=bool)
    hist = [float(F[0])]
    for _ in range(max_iter):
        active &= np.linalg.norm(g, axis=1) > gtol
        active &= ~stalled
        a = np.flatnonzero(active)
        if len(a) == 0:
            break
        Ja, ga, la = J[a], g[a], lam[a]
        h00 = np.einsum("nr,nr->n", Ja[..., 0], Ja[..., 0]) + la
        h11 = np.einsum("nr,nr->n", Ja[..., 1], Ja[..., 1]) + la
        h01 = np.einsum("nr,nr->n", Ja[..., 0], Ja[..., 1])
        det = h00 * h11 - h01 ** 2
        step = np.column_stack([h11 * ga[:, 0] - h01 * ga[:, 1],
                                h00 * ga[:, 1] - h01 * ga[:, 0]]) / det[:, None]
        xt = x[a] - step
        rt, Jt = _residuals(xt, anchors, d[a], z0)
        Ft = np.sum(rt ** 2, axis=1)
        acc = np.isfinite(Ft) & (Ft < F[a])
        ia = a[acc]
        x[ia], r[ia], J[ia], F[ia] = xt[acc], rt[acc], Jt[acc], Ft[acc]
        g[ia] = np.einsum("nr,nrk->nk", rt[acc], Jt[acc])
        lam[ia] /= down
        rej = a[~acc]
        lam[rej] *= up
        tiny = np.linalg.norm(step[~acc], axis=1) <= xtol * (1 + np.linalg.norm(x[rej], axis=1))
        stalled[rej[tiny]] = True
        iters[a] += 1
        if history and acc.size and a[0] == 0 and acc[0]:
            hist.append(float(F[0]))
    converged = (np.linalg.norm(g, axis=1) <= gtol) | stalled
    if history:
        return x, F, iters, converged, hist
    return x, F, iters, converged


def refine_lm(init, anchors, d, z0: float, **opts) -> PositionEstimate:
    """Refine one (x, y) estimate; see :func:`refine_lm_batch` for the options."""
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    if len(anchors) < 2:
        raise ValueError("at least two anchors are required")
    cfg = {**LM_DEFAULTS, **opts}
    x, F, it, conv, hist = refine_lm_batch(np.asarray(init, float)[None], anchors,
                                           np.asarray(d, float)[None], z0, history=True, **cfg)
    return PositionEstimate(x[0], float(F[0]), int(it[0]), bool(conv[0]), hist)


def locate(anchors, d, z0: float, **opts) -> PositionEstimate:
    """Linear start followed by LM refinement for one snapshot."""
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    x0 = linear_init(anchors, d, z0)
    return refine_lm(x0, anchors, d, z0, **opts)


@dataclass
class RmseMap:
    rmse: np.ndarray        # per cell, NaN where flagged
    n_valid: np.ndarray     # snapshots that produced a finite estimate
    flagged: np.ndarray     # fewer than 3 usable references
    mean_error: np.ndarray  # (K, 2) average of (estimate - truth)
    converged: float        # fraction of LM runs meeting the gradient tolerance

    @property
    def global_rmse(self) -> float:
        return float(np.mean(self.rmse[~self.flagged]))


def rmse_map(scene: Scene, measurements: MeasurementSet, path=None, meta=None, **lm_opts) -> RmseMap:
    """Localize every snapshot of every cell and summarize the errors per cell."""
    cfg = {**LM_DEFAULTS, **lm_opts}
    K = scene.K
    vals = measurements.values
    D = vals.shape[0]
    rmse = np.full(K, np.nan)
    n_valid = np.zeros(K, dtype=int)
    flagged = np.zeros(K, dtype=bool)
    mean_err = np.full((K, 2), np.nan)
    n_conv = n_total = 0
    refs = scene.placement.refs
    z0 = scene.grid.z0
    for cells, vis in scene.groups():
        if len(vis) < 3:
            flagged[cells] = True
            continue
        anchors = refs[vis]
        try:
            pinv = _pinv_checked(linear_system(anchors[:, :2], np.zeros(len(vis)), z0, anchors[0, 2])[0])
        except DegenerateGeometryError:
            flagged[cells] = True
            continue
        dist = vals[:, cells][:, :, vis].reshape(-1, len(vis))
        _, b = linear_system(anchors[:, :2], dist, z0, anchors[0, 2])
        x0 = (b @ pinv.T)[:, 1:]
        x, _, _, conv = refine_lm_batch(x0, anchors, dist, z0, **cfg)
        err = x.reshape(D, len(cells), 2) - scene.grid.xy[cells][None]
        e2 = np.sum(err ** 2, axis=-1)
        ok = np.isfinite(e2)
        n_valid[cells] = ok.sum(axis=0)
        rmse[cells] = np.sqrt(np.nanmean(np.where(ok, e2, np.nan), axis=0))
        mean_err[cells] = np.nanmean(np.where(ok[..., None], err, np.nan), axis=0)
        n_conv += int(conv.sum())
        n_total += conv.size
    if flagged.any():
        warnings.warn(f"{int(flagged.sum())} cells see fewer than 3 usable references; "
                      "excluded from the global RMSE", RuntimeWarning, stacklevel=2)
    out = RmseMap(rmse, n_valid, flagged, mean_err, n_conv / n_total if n_total else float("nan"))
    if path is not None:
        header = {"placement": scene.placement.placement_id, "noise": measurements.noise.kind,
                  "sigma_r": measurements.noise.sigma_r, "D": D, "seed": measurements.seed,
                  "global_rmse_m": out.global_rmse if (~flagged).any() else float("nan"), **(meta or {})}
        io.write_columns(path, {"x": scene.grid.xy[:, 0], "y": scene.grid.xy[:, 1],
                                "rmse_m": rmse, "n_valid": n_valid}, header)
    return out
