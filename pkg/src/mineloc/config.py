"""Run configuration: YAML/JSON loading, schema validation and defaults.

Only ``room`` is always required.  Commands that need a placement, a
suite or a checkpoint check for those sections themselves via
:func:`require`.  Defaults follow the reference simulation setup: 0.2 m
cells, sigma_r = 0.2 m, 7.4 m sensing range, D = 1000, one row per cell
per epoch and a 20 000-epoch averaging window.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

import jsonschema
import yaml

from .env import Room, Scene, ReferencePlacement, build_grid, l_room, square_room
from .evaluation import PlacementSuite, generate_suite
from .measure import NoiseModel
from .mine import TrainConfig


class ConfigError(ValueError):
    pass


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_XY = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_NOISE = {
    "type": "object",
    "properties": {"kind": {"type": "string"}, "sigma_r": _POS},
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "required": ["room"],
    "additionalProperties": False,
    "properties": {
        "room": {
            "type": "object",
            "properties": {
                "preset": {"enum": ["square", "l_room"]},
                "vertices": {"type": "array", "items": _XY, "minItems": 3},
                "side": _POS, "notch": _POS,
                "height": _POS, "ue_height": _POS, "ref_height": _POS,
                "name": {"type": "string"},
            },
            "anyOf": [{"required": ["preset"]}, {"required": ["vertices"]}],
            "additionalProperties": False,
        },
        "grid": {"type": "object", "properties": {"cell_size": _POS}, "additionalProperties": False},
        "placement": {
            "type": "object",
            "required": ["anchors"],
            "properties": {"anchors": {"type": "array", "items": _XY, "minItems": 1},
                           "sensing_range": {"type": "number", "minimum": 0},
                           "id": {"type": "string"}},
            "additionalProperties": False,
        },
        "suite": {
            "type": "object",
            "properties": {"path": {"type": "string"}, "n": {"type": "integer", "minimum": 1},
                           "L": {"type": "integer", "minimum": 3}, "seed": {"type": "integer"}},
            "additionalProperties": False,
        },
        "noise": _NOISE,
        "D": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "mine": {
            "type": "object",
            "properties": {
                "preset": {"enum": ["small", "medium", "large"]},
                "epochs": {"type": "integer", "minimum": 0},
                "window": {"type": "integer", "minimum": 1},
                "batch_size": {"type": ["integer", "null"], "minimum": 2},
                "lr0": _POS, "decay": _POS, "decay_epochs": _POS,
                "early_stop_std": {"type": ["number", "null"]},
            },
            "additionalProperties": False,
        },
        "study": {
            "type": "object",
            "properties": {
                "replicates": {"type": "integer", "minimum": 1},
                "presets": {"type": "array", "items": {"enum": ["small", "medium", "large"]}},
                "noises": {"type": "array", "items": _NOISE},
                "D_mc": {"type": "integer", "minimum": 1},
                "trace_every": {"type": "integer", "minimum": 1},
            },
            "additionalProperties": False,
        },
    },
}

DEFAULTS = {
    "grid": {"cell_size": 0.2},
    "noise": {"kind": "gaussian", "sigma_r": 0.2},
    "D": 1000,
    "seed": 0,
    "mine": {"preset": "small", "epochs": 500_000, "window": 20_000, "batch_size": None,
             "lr0": 1e-3, "decay": 0.98, "decay_epochs": 2000.0, "early_stop_std": None},
    "study": {"replicates": 10, "presets": ["small"], "noises": [{"kind": "gaussian", "sigma_r": 0.2}],
              "D_mc": 1000, "trace_every": 100},
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _line_of(text: str, path) -> int | None:
    """1-based line of the mapping node at ``path`` in a YAML document, if found."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError:
        return None
    for key in path:
        if node is None:
            return None
        if isinstance(node, yaml.MappingNode):
            node = next((v for k, v in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            node = node.value[key]
        else:
            break
    return None if node is None else node.start_mark.line + 1


def validate(raw: dict, text: str = "", source: str = "<config>") -> dict:
    """Validate ``raw`` against the schema and merge defaults."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    err = jsonschema.exceptions.best_match(jsonschema.Draft7Validator(SCHEMA).iter_errors(raw))
    if err is not None:
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        line = _line_of(text, list(err.absolute_path)) if text else None
        loc = f"{source}:{line}" if line else source
        if err.validator == "required":
            missing = err.message.split("'")[1]
            raise ConfigError(f"{loc}: missing required field '{missing}' in {where}")
        raise ConfigError(f"{loc}: invalid value at {where}: {err.message}")
    return _merge(DEFAULTS, raw)


def load(path) -> dict:
    path = Path(path)
    text = path.read_text()
    try:
        raw = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: cannot parse: {exc}") from exc
    return validate(raw if raw is not None else {}, text, str(path))


def require(cfg: dict, *fields):
    for f in fields:
        if f not in cfg:
            raise ConfigError(f"missing required field '{f}' for this command")


# -- builders --------------------------------------------------------------

def build_room(cfg) -> Room:
    r = cfg["room"]
    heights = {k: r[k] for k in ("height", "ue_height", "ref_height") if k in r}
    if "vertices" in r:
        return Room(r["vertices"], name=r.get("name", "room"), **heights)
    if r["preset"] == "square":
        return square_room(r.get("side", 4.0), **heights)
    return l_room(r.get("side", 10.0), r.get("notch", 5.0), **heights)


def build_placement(cfg, room: Room) -> ReferencePlacement:
    require(cfg, "placement")
    p = cfg["placement"]
    return ReferencePlacement.from_xy(p["anchors"], room.ref_height, p.get("sensing_range", 7.4),
                                      p.get("id", "p0"))


def build_scene(cfg) -> Scene:
    room = build_room(cfg)
    return Scene(room, build_grid(room, cfg["grid"]["cell_size"]), build_placement(cfg, room))


def build_noise(spec) -> NoiseModel:
    return NoiseModel(spec.get("kind", "gaussian"), spec.get("sigma_r", DEFAULTS["noise"]["sigma_r"]))


def build_train(cfg, seed: int) -> TrainConfig:
    m = dict(cfg["mine"])
    # Short runs (smoke tests, resumed chunks) average over whatever they have.
    if m["epochs"]:
        m["window"] = min(m["window"], m["epochs"])
    return TrainConfig(seed=seed, **m)


def build_suite(cfg, seed: int) -> PlacementSuite:
    require(cfg, "suite")
    s = cfg["suite"]
    if "path" in s:
        return PlacementSuite.load(s["path"])
    if "n" not in s or "L" not in s:
        raise ConfigError("missing required field 'n' or 'L' in suite (or give a suite path)")
    return generate_suite(build_room(cfg), s["n"], s["L"], s.get("seed", seed),
                          cell_size=cfg["grid"]["cell_size"])
