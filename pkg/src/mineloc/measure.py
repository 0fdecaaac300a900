"""Range noise models, masked measurement sampling and likelihoods."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .env import Scene

MASK = -1.0
NOISE_KINDS = ("gaussian", "uniform_zero_mean", "uniform_biased")
_ALIASES = {"gauss": "gaussian", "uniform": "uniform_zero_mean", "biased": "uniform_biased"}
# Slack on uniform support edges so a sample's own generating cell never
# loses support to the rounding in (r + n) - r.
SUPPORT_TOL = 1e-12


@dataclass(frozen=True)
class NoiseModel:
    """Additive i.i.d. range noise with standard deviation ``sigma_r``.

    ``uniform_biased`` draws from U(0, 2 sigma_r) and therefore has mean
    sigma_r; the other two kinds are zero mean.
    """

    kind: str = "gaussian"
    sigma_r: float = 0.2

    def __post_init__(self):
        kind = _ALIASES.get(self.kind, self.kind)
        if kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        object.__setattr__(self, "kind", kind)
        if not self.sigma_r > 0:
            raise ValueError("sigma_r must be positive")

    @property
    def support(self) -> tuple[float, float]:
        """Residual interval (m - r) with non-zero density."""
        s = self.sigma_r
        if self.kind == "gaussian":
            return -math.inf, math.inf
        if self.kind == "uniform_zero_mean":
            return -math.sqrt(3) * s, math.sqrt(3) * s
        return 0.0, 2 * s

    def sample(self, gen: np.random.Generator, shape) -> np.ndarray:
        if self.kind == "gaussian":
            return gen.normal(0.0, self.sigma_r, size=shape)
        lo, hi = self.support
        return gen.uniform(lo, hi, size=shape)

    def log_density(self, residual) -> np.ndarray:
        """Per-reference log density of ``residual = m - r``."""
        res = np.asarray(residual, dtype=float)
        s = self.sigma_r
        if self.kind == "gaussian":
            return -0.5 * (res / s) ** 2 - math.log(math.sqrt(2 * math.pi) * s)
        lo, hi = self.support
        inside = (res >= lo - SUPPORT_TOL) & (res <= hi + SUPPORT_TOL)
        return np.where(inside, -math.log(hi - lo), -np.inf)

    def density(self, residual) -> np.ndarray:
        return np.exp(self.log_density(residual))


def true_range(q, p) -> float:
    """Euclidean 3D distance between a UE position and a reference."""
    return float(np.linalg.norm(np.asarray(q, float) - np.asarray(p, float)))


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    """``values[o, i, j]``: realization o at cell i for reference j; -1 where undetected."""

    values: np.ndarray
    seed: int
    noise: NoiseModel
    stream: str = "measure"

    @property
    def D(self) -> int:
        return self.values.shape[0]

    def realization(self, o: int) -> np.ndarray:
        return self.values[o]


def sample_realization(scene: Scene, noise: NoiseModel, seed: int, index: int,
                       stream: str = "measure") -> np.ndarray:
    """One masked measurement vector per cell, shape (K, L).

    Realization ``index`` comes from its own counter block, so it does not
    depend on which other realizations were generated.
    """
    ranges = scene.ranges
    gen = rng.block(seed, stream, index)
    m = ranges + noise.sample(gen, ranges.shape)
    m[~scene.vis.mask] = MASK
    return m


def sample_measurements(scene: Scene, noise: NoiseModel, D: int, seed: int,
                        stream: str = "measure") -> MeasurementSet:
    if D < 1:
        raise ValueError("D must be at least 1")
    # The mask value must never be a physical range.
    if scene.ranges.min() <= 0:
        raise ValueError("a reference coincides with a cell center")
    values = np.stack([sample_realization(scene, noise, seed, o, stream) for o in range(D)])
    return MeasurementSet(values, int(seed), noise, stream)


def log_likelihood(m, i: int, scene: Scene, noise: NoiseModel) -> float:
    """log p(m | q_i); -inf when the detected set of ``m`` differs from cell i's."""
    m = np.asarray(m, dtype=float)
    vis = scene.vis.mask[i]
    if not np.array_equal(m != MASK, vis):
        return -math.inf
    return float(np.sum(noise.log_density(m[vis] - scene.ranges[i, vis])))


def likelihood(m, i: int, scene: Scene, noise: NoiseModel) -> float:
    return math.exp(log_likelihood(m, i, scene, noise))
