"""Experiment configuration: schema, validation, overrides and model construction."""

from __future__ import annotations

import copy
import json
import re
from pathlib import Path

import jsonschema
import numpy as np

from .errors import ConfigInvalid, IoFailure
from .flows import ModelSystem, Roof
from .lifts import BundleLift, Gluing
from .trig import TrigField

SCHEMA_VERSION = "1.0"
TASKS = ("threshold", "weight", "multiplier", "bisection", "resonance", "correlation", "verify")

_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_NUM = {"type": "number"}
_COMPLEX = {
    "anyOf": [
        {"type": "number"},
        {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        {"type": "array", "items": {"$ref": "#/$defs/complex_array"}, "minItems": 1},
    ]
}

_TRIG = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "shape": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "terms": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["freq", "coeff"],
                "properties": {
                    "freq": {"type": "array", "items": {"type": "integer"}, "minItems": 3, "maxItems": 3},
                    "coeff": {"$ref": "#/$defs/complex_array"},
                },
            },
        },
    },
    "required": ["terms"],
}

_ROOF = {
    "oneOf": [
        _POS,
        {
            "type": "object",
            "additionalProperties": False,
            "required": ["tau0"],
            "properties": {
                "tau0": _POS,
                "terms": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["freq", "amp"],
                        "properties": {
                            "freq": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                            "amp": _NUM,
                            "phase": _NUM,
                        },
                    },
                },
            },
        },
    ]
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "$defs": {"complex_array": _COMPLEX, "trig": _TRIG},
    "type": "object",
    "additionalProperties": False,
    "required": ["system", "lift", "task"],
    "properties": {
        "schema_version": {"type": "string"},
        "task": {"enum": list(TASKS)},
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
        "task_params": {"type": "object"},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["cat_suspension", "hyperbolic_geodesic_model"]},
                "base_matrix": {
                    "type": "array",
                    "minItems": 2,
                    "maxItems": 2,
                    "items": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                },
                "roof": _ROOF,
                "n": _POS_INT,
                "time_sign": {"enum": [1, -1]},
            },
            "allOf": [
                {
                    "if": {"properties": {"kind": {"const": "cat_suspension"}}},
                    "then": {"required": ["base_matrix", "roof"], "not": {"required": ["n"]}},
                },
                {
                    "if": {"properties": {"kind": {"const": "hyperbolic_geodesic_model"}}},
                    "then": {
                        "required": ["n"],
                        "not": {"anyOf": [{"required": ["roof"]}, {"required": ["base_matrix"]}]},
                    },
                },
            ],
        },
        "lift": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["scalar_potential", "forms", "perp_forms", "custom"]},
                "potential": {"oneOf": [_NUM, {"$ref": "#/$defs/trig"}]},
                "k": {"type": "integer", "minimum": 0},
                "connection": {"$ref": "#/$defs/trig"},
                "gluing": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["mode"],
                    "properties": {
                        "mode": {"enum": ["identity", "covariant", "contravariant"]},
                        "k": {"type": "integer", "minimum": 0},
                        "perp": {"type": "boolean"},
                    },
                },
            },
            "allOf": [
                {"if": {"properties": {"kind": {"enum": ["forms", "perp_forms"]}}}, "then": {"required": ["k"]}},
                {"if": {"properties": {"kind": {"const": "custom"}}}, "then": {"required": ["connection"]}},
            ],
        },
    },
}

_SIDE = {"enum": ["u", "s"]}
_HORIZONS = {"type": "array", "items": _POS, "minItems": 3}
_CONTOUR = {
    "type": "object",
    "additionalProperties": False,
    "properties": {"re": _NUM, "im_max": _POS, "n": {"type": "integer", "minimum": 8}, "re_min": _NUM},
}

TASK_SCHEMAS = {
    "threshold": {
        "m_u": {"type": "number", "maximum": 0},
        "m_s": {"type": "number", "minimum": 0},
        "horizons": _HORIZONS,
        "samples": _POS_INT,
        "fiber_samples": _POS_INT,
        "residual_ceiling": _POS,
    },
    "weight": {
        "m_u": _NUM,
        "m_0": _NUM,
        "m_s": _NUM,
        "r_inner": _POS,
        "r_outer": _POS,
        "T_avg": _POS,
        "n_base": _POS_INT,
        "n_fiber": _POS_INT,
        "n_dir": _POS_INT,
        "include_exact": {"type": "boolean"},
        "h_fd": _POS,
        "tol": _POS,
    },
    "multiplier": {
        "side": _SIDE,
        "m": _NUM,
        "lambda_re": _NUM,
        "samples": _POS_INT,
        "fiber_samples": _POS_INT,
        "t_min": _POS,
        "t_max": _POS,
        "panels_per_unit": _POS_INT,
    },
    "bisection": {
        "side": _SIDE,
        "m": _NUM,
        "bracket": {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2},
        "tol": _POS,
        "samples": _POS_INT,
        "fiber_samples": _POS_INT,
        "t_max": _POS,
    },
    "resonance": {
        "f": {"$ref": "#/$defs/trig"},
        "g": {"$ref": "#/$defs/trig"},
        "contour": _CONTOUR,
        "degree": _POS_INT,
        "residue_floor": _POS,
        "fit_ceiling": _POS,
    },
    "correlation": {
        "f": {"$ref": "#/$defs/trig"},
        "g": {"$ref": "#/$defs/trig"},
        "times": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "quadrature_check": {"type": "boolean"},
        "grid": {"type": "integer", "minimum": 3},
        "tol": _POS,
    },
    "verify": {
        "checks": {"type": "array", "items": {"type": "string"}, "uniqueItems": True},
        "tolerance_scale": _POS,
    },
}

_UNIT_HARMONIC = {"terms": [{"freq": [0, 0, 0], "coeff": 1.0}, {"freq": [0, 0, 1], "coeff": 1.0},
                             {"freq": [0, 0, -1], "coeff": 1.0}]}

TASK_DEFAULTS = {
    "threshold": {"m_u": -1.0, "m_s": 1.0, "horizons": [5.0, 10.0, 20.0, 40.0], "samples": 64,
                  "fiber_samples": 4, "residual_ceiling": 0.05},
    "weight": {"m_u": -2.0, "m_0": 0.0, "m_s": 2.0, "r_inner": 0.1, "r_outer": 0.2, "T_avg": 8.0,
               "n_base": 16, "n_fiber": 4, "n_dir": 152, "include_exact": True, "h_fd": 1e-3, "tol": 1e-8},
    "multiplier": {"side": "u", "m": -1.0, "lambda_re": -0.5, "samples": 16, "fiber_samples": 2,
                   "t_min": 0.125, "t_max": 64.0, "panels_per_unit": 128},
    "bisection": {"side": "u", "m": -1.0, "bracket": [-2.0, 0.0], "tol": 1e-3, "samples": 16,
                  "fiber_samples": 2, "t_max": 64.0},
    "resonance": {"f": _UNIT_HARMONIC, "g": _UNIT_HARMONIC,
                  "contour": {"re": 0.5, "im_max": 12.0, "n": 121, "re_min": -1.0},
                  "degree": 12, "residue_floor": 1e-6, "fit_ceiling": 1e-6},
    "correlation": {"f": _UNIT_HARMONIC, "g": _UNIT_HARMONIC, "times": [float(t) for t in range(11)],
                    "quadrature_check": True, "grid": 101, "tol": 1e-8},
    "verify": {"checks": [], "tolerance_scale": 1.0},
}


def _pointer(parts):
    return "/" + "/".join(str(p).replace("~", "~0").replace("/", "~1") for p in parts) if parts else ""


def _error_pointer(err, prefix=()):
    parts = list(prefix) + list(err.absolute_path)
    if err.validator == "required":
        missing = re.match(r"'([^']+)' is a required property", err.message)
        if missing:
            parts.append(missing.group(1))
    elif err.validator == "additionalProperties":
        extra = re.search(r"\('([^']+)'", err.message)
        if extra:
            parts.append(extra.group(1))
    return _pointer(parts)


def _deepest(err):
    """Follow if/then and combinator branches to the most specific failure."""
    while err.context:
        err = jsonschema.exceptions.best_match(err.context)
    return err


def _validate(instance, schema, prefix=()):
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(instance), key=lambda e: (list(e.absolute_path), e.message))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        if err.validator not in ("oneOf", "anyOf"):
            err = _deepest(err) if err.context else err
        raise ConfigInvalid(_error_pointer(err, prefix), err.message)


def validate(config):
    """Schema-check a raw config dict; raises ConfigInvalid with a JSON pointer."""
    if not isinstance(config, dict):
        raise ConfigInvalid("", "config must be a JSON object")
    _validate(config, SCHEMA)
    task = config["task"]
    block = {
        "$defs": SCHEMA["$defs"],
        "type": "object",
        "additionalProperties": False,
        "properties": TASK_SCHEMAS[task],
    }
    _validate(config.get("task_params", {}), block, ("task_params",))
    version = config.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigInvalid("/schema_version", f"unsupported schema version {version!r}")
    return config


def resolve(config):
    """Validated config with every default filled in."""
    validate(config)
    out = copy.deepcopy(config)
    out["schema_version"] = SCHEMA_VERSION
    out.setdefault("seed", 0)
    out.setdefault("output_dir", "out")
    params = copy.deepcopy(TASK_DEFAULTS[out["task"]])
    params.update(out.get("task_params", {}))
    out["task_params"] = params
    _semantic_checks(out)
    return out


def _semantic_checks(cfg):
    p = cfg["task_params"]
    task = cfg["task"]
    if task == "weight":
        if not p["m_u"] <= p["m_0"] <= p["m_s"]:
            raise ConfigInvalid("/task_params/m_0", "need m_u <= m_0 <= m_s")
        if not p["r_inner"] < p["r_outer"]:
            raise ConfigInvalid("/task_params/r_inner", "need r_inner < r_outer")
    if task in ("multiplier", "bisection"):
        if p["side"] == "u" and p["m"] > 0 or p["side"] == "s" and p["m"] < 0:
            raise ConfigInvalid("/task_params/m", "side u needs m <= 0, side s needs m >= 0")
    if task == "bisection" and not p["bracket"][0] < p["bracket"][1]:
        raise ConfigInvalid("/task_params/bracket", "bracket must be increasing")
    if task == "threshold" and sorted(p["horizons"]) != list(p["horizons"]):
        raise ConfigInvalid("/task_params/horizons", "horizons must be increasing")
    if task == "multiplier" and not p["t_min"] < p["t_max"]:
        raise ConfigInvalid("/task_params/t_min", "need t_min < t_max")


def load(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read config {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid("", f"config is not valid JSON: {exc}") from exc


def parse_override(item):
    """``a.b.c=value`` with value read as JSON when possible, else as a string."""
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigInvalid("", f"override {item!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(config, overrides):
    out = copy.deepcopy(config)
    for item in overrides:
        path, value = parse_override(item)
        node = out
        for i, part in enumerate(path[:-1]):
            nxt = node.get(part) if isinstance(node, dict) else None
            if nxt is None:
                nxt = node[part] = {}
            if not isinstance(nxt, dict):
                raise ConfigInvalid(_pointer(path[: i + 1]), "override descends into a non-object")
            node = nxt
        node[path[-1]] = value
    return out


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------


def trig_from_spec(spec, shape=None):
    return TrigField.from_dict(spec, shape)


def build_system(spec):
    try:
        if spec["kind"] == "cat_suspension":
            sys = ModelSystem.cat(tuple(map(tuple, spec["base_matrix"])), Roof.from_spec(spec["roof"]))
        else:
            sys = ModelSystem.hyperbolic(int(spec["n"]))
    except ValueError as exc:
        raise ConfigInvalid("/system", str(exc)) from exc
    if spec.get("time_sign", 1) == -1:
        sys = sys.reversed()
    return sys


def build_lift(spec, sys):
    kind = spec["kind"]
    try:
        if kind == "scalar_potential":
            pot = spec.get("potential", 0.0)
            lift = BundleLift.scalar(pot if isinstance(pot, (int, float)) else trig_from_spec(pot))
        elif kind == "forms":
            lift = BundleLift.forms(sys, spec["k"])
        elif kind == "perp_forms":
            lift = BundleLift.perp_forms(sys, spec["k"])
        else:
            conn = trig_from_spec(spec["connection"])
            g = spec.get("gluing")
            gluing = Gluing(g["mode"], g.get("k", 0), g.get("perp", False)) if g else None
            lift = BundleLift.custom(conn, gluing)
        return lift.validate(sys)
    except (ValueError, KeyError) as exc:
        raise ConfigInvalid("/lift", str(exc)) from exc


def observable(spec, pointer):
    try:
        f = trig_from_spec(spec)
    except (ValueError, TypeError) as exc:
        raise ConfigInvalid(pointer, str(exc)) from exc
    if not np.all(np.isfinite(f.coeffs)):
        raise ConfigInvalid(pointer, "non-finite coefficient")
    return f
