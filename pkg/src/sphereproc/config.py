"""JSON schemas for command configurations and their validation.

Every command reads one JSON object. Unknown keys are rejected and
validation errors name the offending location as a JSON pointer.
"""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema

__all__ = ["ConfigError", "SCHEMAS", "validate_config", "load_config"]


class ConfigError(ValueError):
    pass


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


_POS = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_INT1 = {"type": "integer", "minimum": 1}
_WINDOW = _obj({"lower": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "upper": {"type": "array", "items": {"type": "number"}, "minItems": 1}}, ["lower", "upper"])
_K = {"type": "integer", "minimum": 1}
_COV = _obj({"sigma1": _NONNEG, "phi1": _POS, "sigma2": _NONNEG, "phi2": _POS, "delta": _NONNEG},
            ["sigma1", "phi1", "sigma2", "phi2"])
_GRID = {"oneOf": [
    {"type": "array", "items": _NONNEG, "minItems": 1},
    _obj({"max": _NONNEG, "n": _INT1, "min": _NONNEG}, ["max", "n"]),
]}
_STAT_NAME = {"type": "string", "enum": ["K", "D", "K1K2", "K1", "K2", "K1+K2", "K1,K2"]}
_STATS = {"oneOf": [_STAT_NAME, {"type": "array", "items": _STAT_NAME, "minItems": 1}]}
_CORR = {"type": "string", "enum": ["translation", "temporal", "none"]}
_METHOD = {"type": "string", "enum": ["auto", "cells", "sweep", "naive"]}
_SEED = {"type": "integer", "minimum": 0}

_MODEL = {"oneOf": [
    _obj({"type": {"const": "poisson"}, "rho": _NONNEG, "window": _WINDOW, "k": _K}, ["type", "rho", "window", "k"]),
    _obj({"type": {"const": "lgcp"}, "rho": _NONNEG, "cov": _COV, "window": _WINDOW, "k": _K,
          "spatial_cells": {"type": "array", "items": _INT1}, "sphere_cells": {"type": "integer", "minimum": 2}},
         ["type", "rho", "cov", "window", "k"]),
    _obj({"type": {"const": "sncp"}, "alpha_parent": _POS, "m1": _POS, "m2": _POS, "omega": _POS, "kappa": _NONNEG,
          "window": _WINDOW, "k": _K, "buffer": _POS},
         ["type", "alpha_parent", "m1", "m2", "omega", "kappa", "window", "k"]),
]}

_INTENSITY = {"oneOf": [
    {"type": "string", "enum": ["homogeneous"]},
    _obj({"rho": _POS, "rho1": _POS, "rho2": _POS}),
]}

SCHEMAS = {
    "simulate": _obj({"model": _MODEL, "n_replicates": _INT1, "seed": _SEED, "prefix": {"type": "string"},
                      "threads": _INT1}, ["model"]),
    "estimate": _obj({"input": {"type": "string"}, "r_grid": _GRID, "s_grid": _GRID, "correction": _CORR,
                      "intensity": _INTENSITY, "method": _METHOD, "seed": _SEED}, ["input"]),
    "envelope": _obj({"input": {"type": "string"}, "test": {"type": "string", "enum": ["model", "permutation"]},
                      "null_model": _MODEL, "statistic": _STATS, "n_sims": _INT1, "alpha": _POS,
                      "r_grid": _GRID, "s_grid": _GRID, "correction": _CORR, "reestimate": {"type": "boolean"},
                      "intensity": _INTENSITY, "method": _METHOD, "seed": _SEED, "threads": _INT1},
                     ["input", "statistic"]),
    "fit-cl": _obj({"input": {"type": "string"}, "r": _POS, "s": _POS,
                    "init": _obj({"sigma1": _NONNEG, "phi1": _POS, "sigma2": _NONNEG, "phi2": _POS},
                                 ["sigma1", "phi1", "sigma2", "phi2"]),
                    "bounds": _obj({key: {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
                                    for key in ("sigma1", "phi1", "sigma2", "phi2")}),
                    "n_restarts": {"type": "integer", "minimum": 0}, "seed": _SEED}, ["input"]),
    "fit-mixture": _obj({"input": {"type": "string"},
                         "frame": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                                              "minItems": 3, "maxItems": 3},
                                   "minItems": 3, "maxItems": 3},
                         "watson_axis": {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3},
                         "joint": {"type": "boolean"}, "kappa_max": _POS,
                         "n_restarts": {"type": "integer", "minimum": 0}, "seed": _SEED}, ["input"]),
    "power-study": _obj({"preset": {"type": "string", "enum": ["desk", "reference"]},
                         "deltas": {"type": "array", "items": _NONNEG, "minItems": 1}, "n_reps": _INT1,
                         "n_sims": _INT1, "statistics": _STATS, "rho": _POS, "cov": _COV, "window": _WINDOW,
                         "k": _K, "r_grid": _GRID, "s_grid": _GRID, "cl_r": _POS, "cl_s": _POS, "alpha": _POS,
                         "max_seconds": _POS, "method": _METHOD, "seed": _SEED, "threads": _INT1}),
    "plot": _obj({"input": {"type": "string"}, "kind": {"type": "string", "enum": ["curve", "heatmap"]},
                  "output": {"type": "string"}, "d": _INT1, "k": _K, "centre": {"type": "boolean"},
                  "title": {"type": "string"}}, ["input", "kind"]),
}


def _pointer(path) -> str:
    return "/" + "/".join(str(p).replace("~", "~0").replace("/", "~1") for p in path) if path else "/"


def validate_config(command: str, cfg) -> dict:
    """Validate ``cfg`` for ``command``; raise ConfigError naming the JSON pointer of the first error."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command {command!r}")
    validator = jsonschema.Draft202012Validator(SCHEMAS[command])
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(e.absolute_path), list(map(str, e.absolute_path))))
    if errors:
        err = errors[0]
        best = jsonschema.exceptions.best_match(errors) or err
        raise ConfigError(f"config error at {_pointer(best.absolute_path)}: {best.message}")
    return cfg


def load_config(path) -> dict:
    """Read a config file, unwrapping a run manifest to the config it recorded."""
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError("config error at /: top level must be an object")
    return data
