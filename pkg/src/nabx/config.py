"""Run configuration: JSON schema, defaults and field construction.

:func:`resolve_config` validates a user config and fills every default, so the
dict embedded in output files is complete and re-running from it reproduces
the outputs.  Thread counts and output paths are deliberately not part of it.
"""

from __future__ import annotations

import copy
import json
import math

import jsonschema

from .errors import ConfigError
from .fields import BumpField, CoefficientField, ZeroField, so_dim
from .surrogate import default_K, default_eta
from .transport import OdeOptions

__all__ = ["SCHEMA", "DEFAULTS", "resolve_config", "load_config", "build_truth", "ode_options", "desk_config"]

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}
_nullable_pos = {"anyOf": [{"type": "null"}, _pos]}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "m": {"type": "integer", "minimum": 2},
        "D": _posint,
        "N": _posint,
        "alpha": _pos,
        "noise_scale": {"type": "number", "minimum": 0},
        "eta": _nullable_pos,
        "K": _nullable_pos,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "ode": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rel_step": _pos,
                "min_step": _pos,
                "gauss_nodes": _posint,
                "reorthogonalize": {"type": "boolean"},
                "batch_size": _posint,
            },
        },
        "truth": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["bump", "coefficients", "zero"]},
                "coords": {"type": "array"},
                "centers": {"type": "array"},
                "radius": {"anyOf": [_pos, {"type": "array", "items": _pos}]},
                "amplitude": {"anyOf": [_num, {"type": "array", "items": _num}]},
                "theta": {"type": "array", "items": _num},
            },
        },
        "sampler": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gamma": _nullable_pos,
                "eps": _pos,
                "gamma_multiplier": _pos,
                "k_max": _posint,
                "burn_in": {"type": "integer", "minimum": 0},
                "thinning": _posint,
                "target": {"enum": ["posterior", "surrogate"]},
                "checkpoint_every": {"type": "integer", "minimum": 0},
                "init": {"anyOf": [{"enum": ["oracle", "zero"]}, {"type": "array", "items": _num}]},
                "init_perturbation": {"type": "number", "minimum": 0},
                "center_likelihood": {"type": "boolean"},
                "conv_nodes": _posint,
            },
        },
        "map": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tol": _pos,
                "max_iter": _posint,
                "init": {"anyOf": [{"enum": ["oracle", "zero"]}, {"type": "array", "items": _num}]},
            },
        },
        "scan": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "D_list": {"type": "array", "items": _posint, "minItems": 1},
                "n_max_svd": {"type": "integer", "minimum": 0, "maximum": 10},
                "anchor_n_max": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                "svd_tolerance": _pos,
                "anchor_tolerance": _pos,
            },
        },
        "diagnose": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"prior_samples": _posint, "n_proj": _posint},
        },
        "bias_rule": {"type": "array", "items": _posint, "minItems": 2, "maxItems": 2},
    },
}

DEFAULTS = {
    "m": 2,
    "D": 6,
    "N": 500,
    "alpha": 6.0,
    "noise_scale": 1.0,
    "eta": None,
    "K": None,
    "seed": 1,
    "ode": {"rel_step": 1e-3, "min_step": 1e-4, "gauss_nodes": 48, "reorthogonalize": False, "batch_size": 512},
    "truth": {"kind": "bump", "radius": 0.8, "amplitude": 1.0},
    "sampler": {
        "gamma": None,
        "eps": 0.1,
        "gamma_multiplier": 1.0,
        "k_max": 2000,
        "burn_in": 500,
        "thinning": 3,
        "target": "surrogate",
        "checkpoint_every": 0,
        "init": "oracle",
        "init_perturbation": 0.0,
        "center_likelihood": True,
        "conv_nodes": 64,
    },
    "map": {"tol": 1e-6, "max_iter": 500, "init": "oracle"},
    "scan": {
        "D_list": [6, 10, 15, 21, 28],
        "n_max_svd": 6,
        "anchor_n_max": [1, 2, 3, 4, 5, 6],
        "svd_tolerance": 1e-8,
        "anchor_tolerance": 1e-4,
    },
    "diagnose": {"prior_samples": 512, "n_proj": 200},
    "bias_rule": [24, 48],
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "truth":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def resolve_config(raw: dict | None = None, seed=None) -> dict:
    """Validate ``raw``, apply defaults and derived values (``eta``, ``K``, ``gamma``)."""
    raw = {} if raw is None else raw
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config error at {path}: {exc.message}") from None
    cfg = _merge(DEFAULTS, raw)
    if raw.get("truth", {}).get("kind", "bump") == "bump":
        cfg["truth"] = _merge(DEFAULTS["truth"], raw.get("truth", {}))
    if seed is not None:
        cfg["seed"] = int(seed)
    m, D, N = cfg["m"], cfg["D"], cfg["N"]
    d_m = so_dim(m)
    if D % d_m:
        raise ConfigError(f"D={D} is not a multiple of d_m={d_m}")
    for Dk in cfg["scan"]["D_list"]:
        if Dk % d_m:
            raise ConfigError(f"scan D={Dk} is not a multiple of d_m={d_m}")
    s = cfg["sampler"]
    if s["burn_in"] >= s["k_max"]:
        raise ConfigError("sampler.burn_in must be smaller than sampler.k_max")
    if N < 2 and (cfg["eta"] is None or cfg["K"] is None):
        raise ConfigError("default eta and K need N >= 2")
    if cfg["eta"] is None:
        cfg["eta"] = default_eta(D, N)
    if cfg["K"] is None:
        cfg["K"] = default_K(N, cfg["eta"])
    if s["gamma"] is None:
        from .langevin import step_size_heuristic

        s["gamma"] = step_size_heuristic(s["eps"], D, N, cfg["alpha"], cfg["eta"], s["gamma_multiplier"])
    t = cfg["truth"]
    if t["kind"] == "coefficients":
        if "theta" not in t:
            raise ConfigError("coefficient truth needs 'theta'")
        if len(t["theta"]) % d_m:
            raise ConfigError("truth.theta length is not a multiple of d_m")
    for key in ("init",):
        for section in ("sampler", "map"):
            v = cfg[section][key]
            if isinstance(v, list) and len(v) != D:
                raise ConfigError(f"{section}.init has length {len(v)}, expected D={D}")
    from . import __version__

    cfg["version"] = __version__
    return cfg


def load_config(path, seed=None) -> dict:
    """Load a JSON config, a run's ``manifest.json``, or the config embedded in a nabx output file."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(8)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if head.startswith(b"NABX"):
        from .io import read_container

        _, header, _ = read_container(path)
        raw = dict(header["config"])
    else:
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot parse config {path}: {exc}") from None
        if isinstance(raw, dict) and "files" in raw and isinstance(raw.get("config"), dict):
            raw = dict(raw["config"])
    raw.pop("version", None)
    return resolve_config(raw, seed)


def build_truth(cfg: dict):
    t = cfg["truth"]
    m = cfg["m"]
    if t["kind"] == "zero":
        return ZeroField(m)
    if t["kind"] == "coefficients":
        return CoefficientField(t["theta"], m)
    d_m = so_dim(m)
    coords = t.get("coords") or [[1.0] + [0.0] * (d_m - 1)]
    try:
        return BumpField(m, coords, t.get("centers") or [], t.get("radius", 0.8), t.get("amplitude", 1.0))
    except ValueError as exc:
        raise ConfigError(f"invalid bump truth: {exc}") from None


def ode_options(cfg: dict, threads: int = 1) -> OdeOptions:
    return OdeOptions(threads=threads, **cfg["ode"])


def desk_config(**over) -> dict:
    """The small configuration used throughout the tests (m=2, D=6, N=500)."""
    base = {
        "m": 2,
        "D": 6,
        "N": 500,
        "alpha": 6.0,
        "seed": 1,
        "ode": {"rel_step": 1.0 / 64, "gauss_nodes": 16},
    }
    base.update(over)
    return resolve_config(base)
