"""Experiment drivers: placement suites, convergence, consistency and metric correlation."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io, rng
from .env import ReferencePlacement, Room, Scene, build_grid, validate_placement
from .measure import NoiseModel, sample_measurements
from .mi_mc import mc_mi
from .mine import DivergenceError, SceneSource, TrainConfig, train
from .mlat import rmse_map
from .peb import peb_map

log = logging.getLogger(__name__)


class UndefinedCorrelationError(ValueError):
    pass


def pearson(a, b) -> float:
    """cov(a, b) / (std(a) std(b)) with population moments."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("pearson needs two equal-length vectors of at least two values")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.mean(da * da)), np.sqrt(np.mean(db * db))
    if sa == 0 or sb == 0:
        raise UndefinedCorrelationError("correlation is undefined for a constant input")
    return float(np.clip(np.mean(da * db) / (sa * sb), -1.0, 1.0))


def concordance(a, b) -> float:
    """Fraction of concordant pairs among untied pairs (Kendall-style count)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    i, j = np.triu_indices(len(a), 1)
    s = np.sign(a[i] - a[j]) * np.sign(b[i] - b[j])
    untied = s != 0
    return float(np.mean(s[untied] > 0)) if untied.any() else float("nan")


# -- placement suites ------------------------------------------------------

@dataclass
class PlacementSuite:
    room: Room
    placements: list
    cell_size: float = 0.2
    seed: int | None = None

    def __len__(self):
        return len(self.placements)

    def scenes(self):
        grid = build_grid(self.room, self.cell_size)
        return [Scene(self.room, grid, p) for p in self.placements]

    def to_dict(self) -> dict:
        r = self.room
        return {"room": {"name": r.name, "vertices": r.boundary.tolist(), "height": r.height,
                         "ue_height": r.ue_height, "ref_height": r.ref_height},
                "cell_size": self.cell_size, "seed": self.seed,
                "placements": [{"id": p.placement_id, "anchors": p.xy.tolist(),
                                "sensing_range": p.sensing_range} for p in self.placements]}

    def save(self, path) -> Path:
        return io.write_json(path, self.to_dict())

    @classmethod
    def from_dict(cls, d) -> "PlacementSuite":
        r = d["room"]
        room = Room(np.array(r["vertices"], float), r.get("height", 3.0), r.get("ue_height", 0.1),
                    r.get("ref_height", 2.5), r.get("name", "room"))
        pls = [ReferencePlacement.from_xy(p["anchors"], room.ref_height, p.get("sensing_range", 7.4), p["id"])
               for p in d["placements"]]
        return cls(room, pls, d.get("cell_size", 0.2), d.get("seed"))

    @classmethod
    def load(cls, path) -> "PlacementSuite":
        return cls.from_dict(json.loads(Path(path).read_text()))


def generate_suite(room: Room, n: int, L: int, seed: int, *, cell_size: float = 0.2,
                   sensing_range: float = 7.4, min_visible: int = 4, min_spacing: float = 0.5,
                   min_wall: float = 0.5, max_tries: int = 100_000, prefix: str = "p") -> PlacementSuite:
    """Rejection-sample ``n`` placements of ``L`` anchors satisfying every placement constraint.

    Anchors are drawn uniformly from the part of the room at least
    ``min_wall`` from any wall; whole placements are then rejected on
    spacing or coverage violations.
    """
    grid = build_grid(room, cell_size)
    gen = rng.stream(seed, "suite")
    minx, miny, maxx, maxy = room.polygon.bounds
    out, tries = [], 0
    while len(out) < n:
        if tries >= max_tries:
            raise RuntimeError(f"only {len(out)} of {n} valid placements after {max_tries} tries")
        tries += 1
        xy = np.empty((0, 2))
        while len(xy) < L:
            cand = gen.uniform([minx, miny], [maxx, maxy], size=(4 * L, 2))
            keep = room.contains(cand) & (room.wall_distance(cand) >= min_wall)
            xy = np.vstack([xy, cand[keep]])
        pl = ReferencePlacement.from_xy(xy[:L], room.ref_height, sensing_range, f"{prefix}{len(out):03d}")
        if not validate_placement(room, grid, pl, min_visible, min_spacing, min_wall):
            out.append(pl)
    log.info("generated %d placements in %d tries", n, tries)
    return PlacementSuite(room, out, cell_size, seed)


# -- studies ----------------------------------------------------------------

@dataclass
class CorrelationReport:
    name_a: str
    name_b: str
    ids: list
    a: np.ndarray
    b: np.ndarray
    rho: float | None
    concordance: float | None = None
    excluded: list = field(default_factory=list)
    note: str = ""

    def write_scatter(self, path, meta=None) -> Path:
        header = {"rho": "undefined" if self.rho is None else self.rho,
                  "concordance": "undefined" if self.concordance is None else self.concordance,
                  "reference": "identity line a = b", **(meta or {})}
        return io.write_columns(path, {"placement": np.array(self.ids, dtype=object),
                                       self.name_a: self.a, self.name_b: self.b}, header)


def correlation_report(name_a, name_b, ids, a, b, excluded=()) -> CorrelationReport:
    a, b = np.asarray(a, float), np.asarray(b, float)
    try:
        rho, note = pearson(a, b), ""
    except (UndefinedCorrelationError, ValueError) as exc:
        rho, note = None, str(exc)
    conc = concordance(a, b) if len(a) > 1 else None
    return CorrelationReport(name_a, name_b, list(ids), a, b, rho, conc, list(excluded), note)


def _train_one(args):
    scene, noise, cfg, data_seed = args
    try:
        _, trace, _ = train(SceneSource(scene, noise, data_seed), cfg)
        return trace.values, None
    except DivergenceError as exc:
        return exc.trace.values, str(exc)


def _map(fn, jobs, workers):
    if workers and workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


@dataclass
class ConvergenceResult:
    placement_id: str
    preset: str
    noise: str
    mean_trace: np.ndarray
    std_trace: np.ndarray
    estimates: list
    mc_value: float
    diverged: list

    @property
    def mean_estimate(self) -> float:
        return float(np.mean(self.estimates))


def convergence_study(scenes, presets, noises, cfg: TrainConfig, *, replicates: int = 10,
                      D_mc: int = 1000, seed: int = 0, workers: int = 1) -> list[ConvergenceResult]:
    """Train ``replicates`` independent models per (placement, preset, noise).

    Replicate r uses training seed ``seed + r`` (initialization, data and
    shuffles); the Monte Carlo reference uses ``seed``.
    """
    results = []
    for scene in scenes:
        for noise in noises:
            mc = mc_mi(scene, noise, D_mc, seed).value
            for preset in presets:
                jobs = [(scene, noise, TrainConfig(**{**cfg.__dict__, "preset": preset, "seed": seed + r}),
                         seed + r) for r in range(replicates)]
                runs = _map(_train_one, jobs, workers)
                n = min(len(v) for v, _ in runs)
                traces = np.stack([v[:n] for v, _ in runs])
                diverged = [r for r, (_, err) in enumerate(runs) if err]
                ests = [float(np.mean(v[-cfg.window:])) for v, err in runs if not err and len(v) >= cfg.window]
                results.append(ConvergenceResult(scene.placement.placement_id, preset, noise.kind,
                                                 traces.mean(axis=0), traces.std(axis=0), ests, mc, diverged))
    return results


def write_convergence(results, path, every: int = 1, meta=None) -> Path:
    rows = []
    for r in results:
        for e in range(0, len(r.mean_trace), every):
            rows.append((r.placement_id, r.preset, r.noise, e, r.mean_trace[e], r.std_trace[e], r.mc_value))
    return io.write_table(path, ["placement", "preset", "noise", "epoch", "mean_I", "std_I", "mc_I"], rows, meta)


def consistency_study(suite: PlacementSuite, noise: NoiseModel, cfg: TrainConfig, *,
                      D_mc: int = 1000, seed: int = 0, workers: int = 1) -> CorrelationReport:
    """One model per placement; correlate the windowed MINE estimate with Monte Carlo MI."""
    scenes = suite.scenes()
    runs = _map(_train_one, [(s, noise, cfg, seed) for s in scenes], workers)
    ids, mine_vals, mc_vals, excluded = [], [], [], []
    for s, (vals, err) in zip(scenes, runs):
        pid = s.placement.placement_id
        if err or len(vals) < cfg.window:
            excluded.append((pid, err or "trace shorter than window"))
            continue
        ids.append(pid)
        mine_vals.append(float(np.mean(vals[-cfg.window:])))
        mc_vals.append(mc_mi(s, noise, D_mc, seed).value)
    return correlation_report("mine_I", "mc_I", ids, mine_vals, mc_vals, excluded)


@dataclass
class PlacementMetrics:
    placement_id: str
    rmse: float
    peb: float
    mi: float
    singular_cells: int


def placement_metrics(scene: Scene, noise: NoiseModel, D: int, seed: int) -> PlacementMetrics:
    """Global RMSE, mean PEB and Monte Carlo MI from one shared measurement set."""
    ms = sample_measurements(scene, noise, D, seed)
    rm = rmse_map(scene, ms)
    pm = peb_map(scene, noise.sigma_r)
    mi = mc_mi(scene, noise, measurements=ms).value
    return PlacementMetrics(scene.placement.placement_id, rm.global_rmse, pm.mean if (~pm.singular).any()
                            else math.nan, mi, int(pm.singular.sum()))


def metric_correlation_study(suite: PlacementSuite, noises, *, D: int = 1000, seed: int = 0,
                             workers: int = 1) -> dict:
    """Per noise kind: rho(RMSE, PEB) and rho(RMSE, MI) across the suite.

    Placements with any singular-FIM cell are excluded and listed.
    Returns ``{kind: {"metrics": [...], "rmse_peb": report, "rmse_mi": report}}``.
    """
    scenes = suite.scenes()
    out = {}
    for noise in noises:
        metrics = _map(_metrics_job, [(s, noise, D, seed) for s in scenes], workers)
        good = [m for m in metrics if m.singular_cells == 0]
        excluded = [(m.placement_id, f"{m.singular_cells} singular cells") for m in metrics if m.singular_cells]
        ids = [m.placement_id for m in good]
        rmse = [m.rmse for m in good]
        out[noise.kind] = {
            "metrics": metrics,
            "rmse_peb": correlation_report("rmse_m", "peb_m", ids, rmse, [m.peb for m in good], excluded),
            "rmse_mi": correlation_report("rmse_m", "mc_I", ids, rmse, [m.mi for m in good], excluded),
        }
    return out


def _metrics_job(args):
    return placement_metrics(*args)
