"""Experiment specifications: parameter schema, YAML/flag parsing and validation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import yaml

COMMANDS = ("eigs", "apply", "verify-bubble", "kw", "pohozaev", "extend", "solve", "blowup-study", "star-check")


class ConfigError(ValueError):
    """Malformed or out-of-range experiment parameters (exit status 2)."""


# kind, default; a default of None marks a required key
_COMMON = {"n": ("int", 2), "sigma": ("float", 0.5), "out": ("str", "out"), "threads": ("int", 1),
           "seed": ("int", 0)}

SCHEMA: Dict[str, Dict[str, tuple]] = {
    "eigs": {"kmax": ("int", 8)},
    "apply": {"field": ("str", "bubble"), "lambda": ("float", 2.0), "kmax": ("int", 32), "grid": ("str", "zonal"),
              "points": ("int", 8)},
    "verify-bubble": {"lambda": ("float", 2.0), "kmax": ("int", 64), "grid": ("str", "zonal")},
    "kw": {"K": ("str", "constant:1"), "lambda": ("float", 1.0), "kmax": ("int", 128), "grid": ("str", "zonal")},
    "pohozaev": {"lambda": ("float", 1.0), "radii": ("floatlist", [0.5, 1.0]), "p_offset": ("float", 0.0),
                 "J": ("int", 64), "T": ("float", 2.0)},
    "extend": {"lambda": ("float", 1.0), "R": ("float", 4.0), "nr": ("int", 41), "T": ("float", 1.0),
               "J": ("int", 32)},
    "solve": {"K": ("str", "constant:1"), "tau": ("float", 0.0), "kmax": ("int", 64), "newton_tol": ("float", 1e-10),
              "newton_max_iter": ("int", 40), "damping": ("float", 1.0), "guess": ("str", "constant"),
              "grid": ("str", "zonal")},
    "blowup-study": {"K": ("str", "bump:north,1.0,0.5"), "tau_schedule": ("floatlist", None),
                     "kmax": ("int", 256), "newton_tol": ("float", 1e-10), "epsilon": ("float", 0.05),
                     "R": ("float", 5.0), "peak_factor": ("float", 5.0)},
    "star-check": {"K": ("str", None), "beta": ("float", None), "r_max": ("float", 1.0), "shells": ("int", 12),
                   "directions": ("int", 16)},
}


def _schema(command: str) -> Dict[str, tuple]:
    if command not in SCHEMA:
        raise ConfigError(f"unknown command {command!r}")
    out = dict(_COMMON)
    out.update(SCHEMA[command])
    return out


@dataclass
class ExperimentSpec:
    command: str
    parameters: Dict[str, Any] = field(default_factory=dict)

    def serialize(self) -> str:
        """YAML text that parse_config turns back into an equal spec."""
        return yaml.safe_dump({"command": self.command, **self.parameters}, sort_keys=True)


def _convert(kind, value, where):
    try:
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(str(value)) if not isinstance(value, (int, float)) else int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError
            return float(value)
        if kind == "floatlist":
            if isinstance(value, str):
                items = [v for v in value.replace(";", ",").split(",") if v.strip()]
            elif isinstance(value, (list, tuple)):
                items = list(value)
            else:
                items = [value]
            return [float(v) for v in items]
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: malformed {kind} value {value!r}") from None


def _file_values(text: str) -> Dict[str, tuple]:
    """key -> (value, line) from a YAML mapping."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from None
    if node is None:
        return {}
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError("config must be a mapping of parameter names to values")
    data = yaml.safe_load(text)
    out = {}
    for knode, _ in node.value:
        out[str(knode.value)] = (data[knode.value], knode.start_mark.line + 1)
    return out


def validate(spec: ExperimentSpec) -> ExperimentSpec:
    p = spec.parameters
    if not 0 < p["sigma"] < 1:
        raise ConfigError("sigma must lie in (0,1)")
    if p["n"] < 2:
        raise ConfigError("n must be >= 2")
    if p["n"] <= 2 * p["sigma"]:
        raise ConfigError("need n > 2 sigma")
    if "lambda" in p and not p["lambda"] > 0:
        raise ConfigError("lambda must be positive")
    if p["threads"] < 1:
        raise ConfigError("threads must be >= 1")
    if p["seed"] < 0 or p["seed"] >= 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    for key in ("kmax", "nr", "J", "shells", "directions", "points", "newton_max_iter"):
        if key in p and p[key] < 1:
            raise ConfigError(f"{key} must be positive")
    if "grid" in p and p["grid"] not in ("zonal", "full"):
        raise ConfigError("grid must be 'zonal' or 'full'")
    if p.get("grid") == "full" and p["n"] != 2:
        raise ConfigError("the full grid layout needs n = 2")
    if "tau_schedule" in p:
        ts = p["tau_schedule"]
        if not ts:
            raise ConfigError("tau_schedule must not be empty")
        if any(b >= a for a, b in zip(ts, ts[1:])):
            raise ConfigError("tau_schedule must be strictly decreasing")
        if ts[-1] < 0:
            raise ConfigError("tau_schedule must stay nonnegative")
    if "tau" in p and p["tau"] < 0:
        raise ConfigError("tau must be nonnegative")
    if "damping" in p and not 0 < p["damping"] <= 1:
        raise ConfigError("damping must lie in (0,1]")
    if "beta" in p and not p["beta"] > 1:
        raise ConfigError("beta must exceed 1")
    for key in ("R", "T", "r_max", "epsilon", "newton_tol", "peak_factor"):
        if key in p and not (p[key] > 0 and math.isfinite(p[key])):
            raise ConfigError(f"{key} must be positive")
    if "radii" in p and (not p["radii"] or min(p["radii"]) <= 0):
        raise ConfigError("radii must be positive")
    return spec


def parse_config(command: Optional[str] = None, text: Optional[str] = None,
                 flags: Optional[Dict[str, Any]] = None) -> ExperimentSpec:
    """Build a validated spec from YAML text and/or flag values (flags win)."""
    file_vals = _file_values(text) if text else {}
    if "command" in file_vals:
        fc = str(file_vals.pop("command")[0])
        if command is not None and command != fc:
            raise ConfigError(f"config is for {fc!r} but the command line asks for {command!r}")
        command = fc
    if command is None:
        raise ConfigError("no command given")
    schema = _schema(command)
    params = {}
    for key, (val, line) in file_vals.items():
        if key not in schema:
            raise ConfigError(f"line {line}: unknown key {key!r} for {command}")
        params[key] = _convert(schema[key][0], val, f"line {line}: key {key!r}")
    for key, val in (flags or {}).items():
        if val is None:
            continue
        if key not in schema:
            raise ConfigError(f"flag --{key}: unknown for {command}")
        params[key] = _convert(schema[key][0], val, f"flag --{key}")
    for key, (kind, default) in schema.items():
        if key not in params:
            if default is None:
                raise ConfigError(f"missing required key {key!r} for {command}")
            params[key] = list(default) if isinstance(default, list) else default
    return validate(ExperimentSpec(command, params))
