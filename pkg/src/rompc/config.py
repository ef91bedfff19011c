"""Run configuration: schema, builtin presets, hashing and model construction."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import models
from .lti import StateSpace

_MATRIX_SPEC = {
    "oneOf": [
        {"type": "number"},
        {"type": "array", "items": {"type": "number"}},
        {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
        {
            "type": "object",
            "properties": {
                "diag": {"type": "array", "items": {"type": "number"}},
                "output_weight": {"type": "array", "items": {"type": "number"}},
                "state_weight": {"type": "number"},
            },
            "additionalProperties": False,
        },
        {"type": "null"},
    ]
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["model", "reduction", "weights", "bounds", "setpoints"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "model": {
            "type": "object",
            "properties": {
                "builtin": {"enum": ["synthetic", "beam"]},
                "file": {"type": "string"},
                "params": {"type": "object"},
                "options": {"type": "object"},
            },
            "oneOf": [{"required": ["builtin"]}, {"required": ["file"]}],
            "additionalProperties": False,
        },
        "reduction": {
            "type": "object",
            "required": ["n"],
            "properties": {"n": {"type": "integer", "minimum": 1},
                           "marginal_tol": {"type": "number", "exclusiveMinimum": 0}},
            "additionalProperties": False,
        },
        "weights": {
            "type": "object",
            "required": ["Q", "R", "N"],
            "properties": {"Q": _MATRIX_SPEC, "R": _MATRIX_SPEC,
                           "N": {"type": "integer", "minimum": 1},
                           "Qe": _MATRIX_SPEC, "Re": _MATRIX_SPEC},
            "additionalProperties": False,
        },
        "bounds": {
            "type": "object",
            "required": ["tau"],
            "properties": {
                "tau": {"type": "integer", "minimum": 1},
                "tau_max": {"type": "integer", "minimum": 1},
                "keep_tightening": {"type": "boolean"},
                "tau_ss": {"type": "integer", "minimum": 1},
                "eps_x": {"type": "number", "exclusiveMinimum": 0},
                "eps_u": {"type": "number", "exclusiveMinimum": 0},
                "directions": {
                    "type": "object",
                    "properties": {k: {"type": ["array", "null"]} for k in ("D", "E", "R")},
                    "additionalProperties": False,
                },
            },
            "additionalProperties": False,
        },
        "setpoints": {"type": "array", "minItems": 1,
                      "items": {"type": "array", "items": {"type": "number"}, "minItems": 1}},
        "scenarios": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "disturbance"],
                "properties": {
                    "name": {"type": "string"},
                    "disturbance": {"enum": ["zero", "uniform", "vertex", "witness"]},
                    "controller": {"enum": ["rompc", "naive"]},
                    "seed": {"type": "integer", "minimum": 0},
                    "steps": {"type": "integer", "minimum": 0},
                    "setpoint": {"type": "integer", "minimum": 0},
                    "face": {"type": "integer", "minimum": 0},
                    "x0": {"type": "array", "items": {"type": "number"}},
                },
                "additionalProperties": False,
            },
        },
        "output_dir": {"type": "string"},
    },
}


class ConfigError(ValueError):
    pass


def _synthetic_config() -> dict:
    return {
        "name": "synthetic",
        "model": {"builtin": "synthetic"},
        "reduction": {"n": 2},
        "weights": {"Q": {"diag": [1.0, 1.0]}, "R": 1.0, "N": 10},
        "bounds": {"tau": 4, "tau_max": 64, "keep_tightening": True, "tau_ss": 50,
                   "eps_x": 1e-6, "eps_u": 1e-6},
        "setpoints": [models.SYNTHETIC_SETPOINT.tolist()],
        "scenarios": [
            {"name": "naive", "disturbance": "zero", "controller": "naive", "steps": 500},
            {"name": "zero", "disturbance": "zero", "steps": 500},
            {"name": "uniform", "disturbance": "uniform", "seed": 1, "steps": 500},
            {"name": "vertex", "disturbance": "vertex", "steps": 500},
            {"name": "witness", "disturbance": "witness", "face": 0, "steps": 500},
        ],
    }


def _beam_config() -> dict:
    qe = [1.0] * 8
    qe[1] = 1e4  # weight the velocity-like marginal coordinate
    return {
        "name": "beam",
        "model": {"builtin": "beam"},
        "reduction": {"n": 8, "marginal_tol": 1e-6},
        "weights": {"Q": {"output_weight": [1e4, 1.0], "state_weight": 1.0}, "R": 1.0,
                    "N": 20, "Qe": {"diag": qe}},
        "bounds": {"tau": 16, "tau_max": 64, "keep_tightening": False, "tau_ss": 50,
                   "eps_x": 1e-6, "eps_u": 1e-6},
        "setpoints": [[0.05]],
        "scenarios": [
            {"name": "uniform", "disturbance": "uniform", "seed": 1, "steps": 1000},
        ],
    }


BUILTIN_CONFIGS = {"synthetic": _synthetic_config, "beam": _beam_config}


def builtin_config(name: str) -> dict:
    try:
        return BUILTIN_CONFIGS[name]()
    except KeyError:
        raise ConfigError(f"unknown builtin config {name!r}; choose from {sorted(BUILTIN_CONFIGS)}")


def validate_config(cfg: dict, base_dir: Path | None = None) -> dict:
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config invalid at {where}: {exc.message}") from None
    src = cfg["model"].get("file")
    if src is not None:
        path = Path(src) if base_dir is None else (base_dir / src)
        if not path.is_file():
            raise ConfigError(f"model file {str(path)!r} does not exist")
    return cfg


def load_config(source: str) -> tuple[dict, Path | None]:
    """A builtin name or a path to a JSON config file."""
    if source in BUILTIN_CONFIGS:
        return validate_config(builtin_config(source)), None
    path = Path(source)
    if not path.is_file():
        raise ConfigError(f"config {source!r} is neither a builtin name nor an existing file")
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {source!r} is not valid JSON: {exc}") from None
    return validate_config(cfg, path.parent), path.parent


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()[:16]


def resolve_config(cfg: dict, base_dir: Path | None = None) -> dict:
    """Inline a model file so that the stored config is self-contained."""
    cfg = copy.deepcopy(cfg)
    src = cfg["model"].get("file")
    if src is not None:
        path = Path(src) if base_dir is None else base_dir / src
        cfg["model"] = {"inline": json.loads(path.read_text())}
    return cfg


def build_model(model_cfg: dict) -> models.ExampleProblem:
    if "inline" in model_cfg:
        return models.ExampleProblem.from_dict(model_cfg["inline"])
    if "file" in model_cfg:
        return models.ExampleProblem.from_dict(json.loads(Path(model_cfg["file"]).read_text()))
    name = model_cfg["builtin"]
    if name == "synthetic":
        return models.synthetic_system()
    params = models.BeamParams(**model_cfg.get("params", {}))
    return models.flexible_beam(params, **model_cfg.get("options", {}))


def weight_matrix(spec, dim: int, rom: StateSpace | None = None, name: str = "weight"):
    """Interpret a weight entry: scalar, diagonal, full matrix or output weighting.

    ``{"output_weight": w, "state_weight": s}`` means ``H' diag(w) H + s I`` in
    the reduced coordinates; it needs ``rom``.
    """
    if spec is None:
        return None
    if isinstance(spec, dict):
        if "diag" in spec:
            d = np.asarray(spec["diag"], dtype=float)
            if d.size != dim:
                raise ConfigError(f"{name}: diag has {d.size} entries, expected {dim}")
            return np.diag(d)
        if rom is None:
            raise ConfigError(f"{name}: output weighting requires the reduced model")
        w = np.asarray(spec.get("output_weight", np.zeros(rom.o)), dtype=float)
        if w.size != rom.o:
            raise ConfigError(f"{name}: output_weight has {w.size} entries, expected {rom.o}")
        return rom.H.T @ np.diag(w) @ rom.H + float(spec.get("state_weight", 0.0)) * np.eye(dim)
    M = np.asarray(spec, dtype=float)
    if M.ndim == 0:
        return float(M) * np.eye(dim)
    if M.ndim == 1:
        if M.size != dim:
            raise ConfigError(f"{name}: {M.size} diagonal entries, expected {dim}")
        return np.diag(M)
    if M.shape != (dim, dim):
        raise ConfigError(f"{name}: shape {M.shape}, expected {(dim, dim)}")
    return M


@dataclass(frozen=True)
class Scenario:
    name: str
    disturbance: str
    controller: str = "rompc"
    seed: int = 0
    steps: int = 500
    setpoint: int = 0
    face: int = 0
    x0: tuple[float, ...] | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        if d.get("x0") is not None:
            d["x0"] = tuple(d["x0"])
        return cls(**d)
