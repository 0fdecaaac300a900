"""Command-line front end.

Every command reads one YAML or JSON run configuration, writes its
artifacts below ``--out`` and stamps each file with the config hash and
master seed.  Exit codes: 0 success, 2 configuration error, 3 numerical
failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import config as C
from . import io
from .env import GeometryError, ReferencePlacement, build_grid, validate_placement, visibility
from .evaluation import (convergence_study, consistency_study, metric_correlation_study,
                         write_convergence)
from .measure import sample_measurements
from .mi_mc import mc_mi, mi_map
from .mine import SceneSource, fine_tune, load_checkpoint, save_checkpoint, select_parent, train
from .mlat import rmse_map
from .peb import peb_map

log = logging.getLogger("mineloc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class Run:
    """Resolved config plus the stamp every output carries."""

    def __init__(self, args, cfg):
        self.args = args
        self.cfg = cfg
        self.seed = cfg["seed"]
        self.hash = io.config_hash(cfg)
        self.out = Path(args.out)
        self.unit, self.factor = ("bits", 1 / math.log(2)) if args.bits else ("nats", 1.0)
        self.workers = 1 if args.deterministic else max(1, args.threads)
        self.written = []

    @property
    def meta(self) -> dict:
        return {"command": self.args.command, "config_hash": self.hash, "seed": self.seed}

    def path(self, name) -> Path:
        # Recorded relative to --out so manifests do not depend on where a run lives.
        self.written.append(str(name))
        return self.out / name

    def json(self, name, obj) -> Path:
        return io.write_json(self.path(name), {**self.meta, **obj})


# -- commands --------------------------------------------------------------

def cmd_grid(run: Run) -> int:
    room = C.build_room(run.cfg)
    grid = build_grid(room, run.cfg["grid"]["cell_size"])
    io.write_columns(run.path("grid.csv"), {"cell": np.arange(grid.K), "x": grid.xy[:, 0],
                                            "y": grid.xy[:, 1]}, {**run.meta, "K": grid.K})
    if "placement" in run.cfg:
        pl = C.build_placement(run.cfg, room)
        vis = visibility(room, grid, pl)
        io.write_columns(run.path("visibility.csv"),
                         {"cell": np.arange(grid.K), "x": grid.xy[:, 0], "y": grid.xy[:, 1],
                          "R_i": vis.counts, "bitmask": vis.bitmasks()},
                         {**run.meta, "placement": pl.placement_id, "L": pl.L})
    print(f"K = {grid.K} cells written to {run.out}")
    return EXIT_OK


def cmd_validate(run: Run) -> int:
    scene = C.build_scene(run.cfg)
    v = validate_placement(scene.room, scene.grid, scene.placement)
    run.json("validation.json", {"valid": not v, "violations": [
        {"kind": x.kind, "detail": x.detail, "index": list(x.index)} for x in v]})
    for x in v:
        print(f"{x.kind}: {x.detail}")
    print("placement valid" if not v else f"{len(v)} violations")
    return EXIT_OK if not v else EXIT_CONFIG


def cmd_simulate(run: Run) -> int:
    scene = C.build_scene(run.cfg)
    noise = C.build_noise(run.cfg["noise"])
    ms = sample_measurements(scene, noise, run.cfg["D"], run.seed)
    K, L = scene.K, scene.L
    cols = ["cell_index", "realization"] + [f"m_{j + 1}" for j in range(L)]
    rows = ((i, o, *ms.values[o, i]) for o in range(ms.D) for i in range(K))
    io.write_table(run.path("measurements.csv"), cols, rows,
                   {**run.meta, "noise": noise.kind, "sigma_r": noise.sigma_r, "D": ms.D,
                    "placement": scene.placement.placement_id})
    print(f"{ms.D} x {K} snapshots of {L} references written")
    return EXIT_OK


def cmd_mc_mi(run: Run) -> int:
    scene = C.build_scene(run.cfg)
    noise = C.build_noise(run.cfg["noise"])
    est = mc_mi(scene, noise, run.cfg["D"], run.seed)
    table = mi_map(est, scene.grid)
    io.write_columns(run.path("mi_map.csv"), {"x": table[:, 0], "y": table[:, 1],
                                              "c_x": table[:, 2] * run.factor},
                     {**run.meta, "unit": run.unit})
    run.json("mc_mi.json", {"value": est.value * run.factor, "unit": run.unit, "method": est.method,
                            "log_K": math.log(scene.K) * run.factor, **est.metadata})
    print(f"I_MC = {est.value * run.factor:.6f} {run.unit} (K = {scene.K}, D = {est.metadata['D']})")
    return EXIT_OK


def _write_trace(run: Run, trace, name="trace.csv"):
    epochs = trace.start_epoch + np.arange(len(trace))
    io.write_columns(run.path(name), {"epoch": epochs, "I_N": trace.values * run.factor, "lr": trace.lr},
                     {**run.meta, "unit": run.unit})


def _ckpt_meta(run: Run, scene, tcfg):
    return {**run.meta, "preset": tcfg.preset, "placement": scene.placement.placement_id,
            "anchors": scene.placement.xy.tolist()}


def cmd_mine_train(run: Run) -> int:
    scene = C.build_scene(run.cfg)
    noise = C.build_noise(run.cfg["noise"])
    tcfg = C.build_train(run.cfg, run.seed)
    source = SceneSource(scene, noise, run.seed, tcfg.batch_size)
    net = opt = None
    start = 0
    if run.args.resume:
        net, opt, start, _ = load_checkpoint(run.args.resume)
    net, trace, opt = train(source, tcfg, net, optimizer=opt, start_epoch=start)
    end = start + len(trace)
    save_checkpoint(run.path("checkpoint.json"), net, opt, end, _ckpt_meta(run, scene, tcfg))
    _write_trace(run, trace)
    if len(trace):
        w = min(tcfg.window, len(trace))
        print(f"epochs {start}..{end}: trailing-{w} estimate {trace.estimate(w) * run.factor:.6f} {run.unit}")
    return EXIT_OK


def cmd_mine_finetune(run: Run) -> int:
    scene = C.build_scene(run.cfg)
    noise = C.build_noise(run.cfg["noise"])
    tcfg = C.build_train(run.cfg, run.seed)
    parents = {}
    for p in run.args.parent:
        if not Path(p).is_file():
            raise FileNotFoundError(f"parent checkpoint {p} does not exist")
        parents[p] = load_checkpoint(p)
    if len(parents) == 1:
        chosen = next(iter(parents))
    else:
        placements = {}
        for p, (_, _, _, meta) in parents.items():
            if "anchors" not in meta:
                raise C.ConfigError(f"parent {p} records no anchors; pass a single --parent")
            placements[p] = ReferencePlacement.from_xy(meta["anchors"], scene.room.ref_height)
        chosen = select_parent(scene.placement, placements)
    net, trace, opt = fine_tune(parents[chosen][0], SceneSource(scene, noise, run.seed, tcfg.batch_size), tcfg)
    save_checkpoint(run.path("checkpoint.json"), net, opt, len(trace),
                    {**_ckpt_meta(run, scene, tcfg), "parent": str(chosen)})
    _write_trace(run, trace)
    print(f"fine-tuned from {chosen}")
    return EXIT_OK


def cmd_mine_estimate(run: Run) -> int:
    meta, data = io.read_columns(run.args.trace)
    window = run.args.window or run.cfg["mine"]["window"]
    values = data["I_N"]
    if window > len(values):
        raise C.ConfigError(f"window {window} exceeds trace length {len(values)}")
    unit = meta.get("unit", "nats")
    value = float(np.mean(values[-window:]))
    if unit != run.unit:
        value *= run.factor if unit == "nats" else math.log(2)
    run.json("mine_estimate.json", {"value": value, "unit": run.unit, "window": window,
                                    "trace": str(run.args.trace), "trace_config_hash": meta.get("config_hash")})
    print(f"I_MINE = {value:.6f} {run.unit} over the last {window} epochs")
    return EXIT_OK


def cmd_peb_map(run: Run) -> int:
    scene = C.build_scene(run.cfg)
    sigma = run.cfg["noise"]["sigma_r"]
    pm = peb_map(scene, sigma, run.path("peb_map.csv"), run.meta)
    print(f"mean PEB {pm.mean:.4f} m, {int(pm.singular.sum())} singular cells")
    return EXIT_OK


def cmd_mlat_rmse(run: Run) -> int:
    scene = C.build_scene(run.cfg)
    noise = C.build_noise(run.cfg["noise"])
    ms = sample_measurements(scene, noise, run.cfg["D"], run.seed)
    rm = rmse_map(scene, ms, run.path("rmse_map.csv"), run.meta)
    print(f"global RMSE {rm.global_rmse:.4f} m, LM converged {rm.converged:.1%}")
    return EXIT_OK


def _suite(run: Run):
    suite = C.build_suite(run.cfg, run.seed)
    suite.save(run.path("suite.json"))
    return suite


def _manifest(run: Run, extra):
    run.json("manifest.json", {"config": run.cfg, "outputs": list(run.written), **extra})


def cmd_study_convergence(run: Run) -> int:
    st = run.cfg["study"]
    if "placement" in run.cfg:
        scenes = [C.build_scene(run.cfg)]
    else:
        scenes = _suite(run).scenes()
    tcfg = C.build_train(run.cfg, run.seed)
    res = convergence_study(scenes, st["presets"], [C.build_noise(n) for n in st["noises"]], tcfg,
                            replicates=st["replicates"], D_mc=st["D_mc"], seed=run.seed,
                            workers=run.workers)
    for r in res:
        r.mean_trace, r.std_trace = r.mean_trace * run.factor, r.std_trace * run.factor
        r.mc_value *= run.factor
        r.estimates = [e * run.factor for e in r.estimates]
    write_convergence(res, run.path("convergence.csv"), st["trace_every"], {**run.meta, "unit": run.unit})
    rows = [(r.placement_id, r.preset, r.noise, r.mean_estimate if r.estimates else math.nan,
             float(np.std(r.estimates)) if r.estimates else math.nan, r.mc_value, len(r.diverged)) for r in res]
    io.write_table(run.path("convergence_summary.csv"),
                   ["placement", "preset", "noise", "mean_I", "std_I", "mc_I", "diverged"], rows,
                   {**run.meta, "unit": run.unit, "window": tcfg.window})
    _manifest(run, {"placements": [s.placement.placement_id for s in scenes]})
    for row in rows:
        print("{} {} {}: MINE {:.4f} +- {:.4f}, MC {:.4f}, diverged {}".format(*row))
    return EXIT_OK


def cmd_study_consistency(run: Run) -> int:
    suite = _suite(run)
    noise = C.build_noise(run.cfg["noise"])
    tcfg = C.build_train(run.cfg, run.seed)
    rep = consistency_study(suite, noise, tcfg, D_mc=run.cfg["study"]["D_mc"], seed=run.seed,
                            workers=run.workers)
    rep.a, rep.b = rep.a * run.factor, rep.b * run.factor
    rep.write_scatter(run.path("consistency_scatter.csv"), {**run.meta, "unit": run.unit})
    _manifest(run, {"rho": rep.rho, "concordance": rep.concordance,
                    "excluded": [list(e) for e in rep.excluded]})
    print(f"rho(MINE, MC) = {rep.rho}, concordant pairs {rep.concordance}")
    return EXIT_OK


def cmd_study_correlation(run: Run) -> int:
    suite = _suite(run)
    noises = [C.build_noise(n) for n in run.cfg["study"]["noises"]]
    res = metric_correlation_study(suite, noises, D=run.cfg["D"], seed=run.seed, workers=run.workers)
    summary = []
    for kind, r in res.items():
        m = r["metrics"]
        io.write_columns(run.path(f"correlation_{kind}.csv"),
                         {"placement": np.array([x.placement_id for x in m], dtype=object),
                          "rmse_m": [x.rmse for x in m], "peb_m": [x.peb for x in m],
                          "mc_I": [x.mi * run.factor for x in m],
                          "singular_cells": [x.singular_cells for x in m]},
                         {**run.meta, "noise": kind, "unit": run.unit})
        pe, mi = r["rmse_peb"], r["rmse_mi"]
        summary.append((kind, _rho(pe.rho), _rho(mi.rho), len(pe.ids), len(pe.excluded)))
    io.write_table(run.path("correlation_summary.csv"),
                   ["noise", "rho_rmse_peb", "rho_rmse_mi", "n_used", "n_excluded"], summary, run.meta)
    _manifest(run, {"placements": [p.placement_id for p in suite.placements]})
    for row in summary:
        print("{}: rho(RMSE, PEB) = {}, rho(RMSE, MI) = {} over {} placements ({} excluded)".format(*row))
    return EXIT_OK


def _rho(v):
    return "undefined" if v is None else v


COMMANDS = {
    "grid": (cmd_grid, "discretize the room; export visibility if a placement is given"),
    "validate": (cmd_validate, "check placement constraints"),
    "simulate": (cmd_simulate, "sample masked range measurements"),
    "mc-mi": (cmd_mc_mi, "Monte Carlo mutual information and per-cell map"),
    "mine-train": (cmd_mine_train, "train a statistics network (optionally resume)"),
    "mine-finetune": (cmd_mine_finetune, "fine-tune from a parent checkpoint"),
    "mine-estimate": (cmd_mine_estimate, "trailing-window MI estimate from a trace"),
    "peb-map": (cmd_peb_map, "position error bound per cell"),
    "mlat-rmse": (cmd_mlat_rmse, "multilateration RMSE per cell"),
    "study-convergence": (cmd_study_convergence, "replicated MINE training vs Monte Carlo"),
    "study-consistency": (cmd_study_consistency, "MINE vs Monte Carlo across a placement suite"),
    "study-correlation": (cmd_study_correlation, "RMSE vs PEB and MI across a placement suite"),
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mineloc", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("config", help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--bits", action="store_true", help="report MI in bits instead of nats")
    common.add_argument("--threads", type=int, default=1, help="worker processes for studies")
    common.add_argument("--deterministic", action="store_true", help="force serial execution")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_)
        if name in ("mine-train", "mine-finetune"):
            p.add_argument("--epochs", type=int, help="override mine.epochs")
        if name == "mine-train":
            p.add_argument("--resume", help="checkpoint to continue from")
        if name == "mine-finetune":
            p.add_argument("--parent", action="append", required=True,
                           help="parent checkpoint; repeat to let the closest placement win")
        if name == "mine-estimate":
            p.add_argument("--trace", required=True, help="trace CSV written by mine-train")
            p.add_argument("--window", type=int, help="override mine.window")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = C.load(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if getattr(args, "epochs", None) is not None:
            cfg["mine"]["epochs"] = args.epochs
        return COMMANDS[args.command][0](Run(args, cfg))
    except (C.ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FloatingPointError, np.linalg.LinAlgError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
