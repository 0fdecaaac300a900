"""Exact discrete mutual information and its Monte Carlo approximation.

The Monte Carlo estimator assumes a uniform prior over the K grid cells, so
``I = log K - H(X|Z)``; the conditional entropy is averaged over D
measurement realizations drawn at every cell.  Posteriors are normalized in
log space.  Because the likelihood vanishes unless the detected reference
set matches, a realization from cell x only competes with cells sharing x's
visibility pattern, which is what keeps the K x K comparison tractable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import io
from .env import GridMap, Scene
from .measure import SUPPORT_TOL, MeasurementSet, NoiseModel, sample_realization

# Posterior weights below this (relative to the mode) are exact zeros.
LOG_TINY = math.log(1e-300)


@dataclass
class MiEstimate:
    """An MI value in nats plus where it came from."""

    value: float
    method: str
    per_cell: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def bits(self) -> float:
        return self.value / math.log(2)


def exact_mi(pmf) -> MiEstimate:
    """Double sum of p(x,z) log(p(x,z) / (p(x) p(z))) over a joint pmf matrix."""
    p = np.asarray(pmf, dtype=float)
    if p.ndim != 2:
        raise ValueError("joint pmf must be a matrix over (x, z)")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("joint pmf must be non-negative and sum to 1")
    px = p.sum(axis=1, keepdims=True)
    pz = p.sum(axis=0, keepdims=True)
    nz = p > 0
    ratio = p[nz] / (px * pz)[nz]
    return MiEstimate(float(np.sum(p[nz] * np.log(ratio))), "exact")


@njit(cache=True)
def _posterior_entropy(obs, cand, gaussian, inv2s2, lo, hi):
    """Entropy of the posterior over ``cand`` rows for each ``obs`` row.

    obs: (n, S) measured ranges; cand: (G, S) true ranges of the candidate
    cells.  Returns NaN where no candidate has positive likelihood.
    """
    n, S = obs.shape
    G = cand.shape[0]
    out = np.empty(n)
    ll = np.empty(G)
    for i in range(n):
        mx = -np.inf
        for g in range(G):
            acc = 0.0
            if gaussian:
                for s in range(S):
                    d = obs[i, s] - cand[g, s]
                    acc -= d * d
                acc *= inv2s2
            else:
                for s in range(S):
                    d = obs[i, s] - cand[g, s]
                    if d < lo or d > hi:
                        acc = -np.inf
                        break
            ll[g] = acc
            if acc > mx:
                mx = acc
        if mx == -np.inf:
            out[i] = np.nan
            continue
        z = 0.0
        w = 0.0
        for g in range(G):
            t = ll[g] - mx
            if t > LOG_TINY:
                e = np.exp(t)
                z += e
                w += e * t
        out[i] = np.log(z) - w / z
    return out


def _kernel_args(noise: NoiseModel):
    if noise.kind == "gaussian":
        return True, 0.5 / noise.sigma_r ** 2, -np.inf, np.inf
    lo, hi = noise.support
    return False, 0.0, lo - SUPPORT_TOL, hi + SUPPORT_TOL


def conditional_entropies(scene: Scene, realizations: np.ndarray, noise: NoiseModel) -> np.ndarray:
    """Posterior entropy for every (realization, cell); input (d, K, L), output (d, K)."""
    gaussian, inv2s2, lo, hi = _kernel_args(noise)
    d, K, _ = realizations.shape
    H = np.empty((d, K))
    ranges = scene.ranges
    for cells, refs in scene.groups():
        cand = np.ascontiguousarray(ranges[np.ix_(cells, refs)])
        obs = realizations[:, cells][:, :, refs].reshape(d * len(cells), len(refs))
        ent = _posterior_entropy(np.ascontiguousarray(obs), cand, gaussian, inv2s2, lo, hi)
        H[:, cells] = ent.reshape(d, len(cells))
    if np.isnan(H).any():
        o, i = np.argwhere(np.isnan(H))[0]
        raise FloatingPointError(
            f"zero posterior mass for realization {o} at cell {i}: its own cell has no likelihood")
    return H


def mc_mi(scene: Scene, noise: NoiseModel, D: int = 1000, seed: int = 0, *,
          measurements: MeasurementSet | None = None, likelihood: NoiseModel | None = None,
          chunk: int = 64, stream: str = "measure") -> MiEstimate:
    """Monte Carlo MI between UE cell and masked range measurements.

    Parameters
    ----------
    noise : NoiseModel
        Model used to draw the measurements.
    likelihood : NoiseModel, optional
        Model assumed for the posterior; defaults to ``noise``.
    measurements : MeasurementSet, optional
        Reuse existing realizations instead of sampling ``D`` new ones.

    Returns
    -------
    MiEstimate
        ``per_cell[x] = log K - mean_o H(X | z_x^o)`` so that ``value`` is the
        mean of ``per_cell``.
    """
    lik = likelihood or noise
    if measurements is not None:
        D = measurements.D
        seed = measurements.seed
    if D < 1:
        raise ValueError("D must be at least 1")
    K = scene.K
    total = np.zeros(K)
    for start in range(0, D, chunk):
        idx = range(start, min(start + chunk, D))
        if measurements is not None:
            block = measurements.values[start:idx.stop]
        else:
            block = np.stack([sample_realization(scene, noise, seed, o, stream) for o in idx])
        total += conditional_entropies(scene, block, lik).sum(axis=0)
    per_cell = math.log(K) - total / D
    meta = {"seed": int(seed), "D": int(D), "K": K, "noise": noise.kind, "sigma_r": noise.sigma_r,
            "likelihood": lik.kind, "placement": scene.placement.placement_id}
    return MiEstimate(float(np.mean(per_cell)), "monte_carlo", per_cell, meta)


def mi_map(estimate: MiEstimate, grid: GridMap, path=None, meta=None) -> np.ndarray:
    """Per-cell contributions as an (K, 3) array of (x, y, c_x); optionally written as CSV."""
    if estimate.per_cell is None:
        raise ValueError("estimate carries no per-cell contributions")
    if len(estimate.per_cell) != grid.K:
        raise ValueError("per-cell vector does not match the grid")
    table = np.column_stack([grid.xy, estimate.per_cell])
    if path is not None:
        header = {"value_nats": estimate.value, **estimate.metadata, **(meta or {})}
        io.write_columns(path, {"x": table[:, 0], "y": table[:, 1], "c_x": table[:, 2]}, header)
    return table
