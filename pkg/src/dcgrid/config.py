"""Scenario configuration files.

A scenario is a single versioned JSON document carrying the network
constants, the steady-state targets, the controller configuration, the
disturbance definition, the integration settings and an optional output
prefix.  Documents are validated against a JSON schema (unknown keys
are rejected everywhere) and then cross-checked by the constructing
dataclasses; loading and re-serializing a file materializes every
default, so the on-disk form of a loaded scenario is complete and
diff-friendly.

Units: capacitances F, inductances H, resistances Ohm, voltages V,
currents A, times s; duty ratio and gains dimensionless unless noted in
the field docs of the corresponding dataclasses.
"""

from __future__ import annotations

import json
import os
from importlib import resources

import jsonschema
import numpy as np

from .attack import ATTACK_KINDS, AttackSpec, ChannelAttack
from .control import ControllerConfig
from .model import MicrogridParams
from .sim import CONTROLLER_KINDS, Scenario

__all__ = [
    "ConfigError",
    "SCENARIO_SCHEMA",
    "load_scenario",
    "scenario_from_dict",
    "scenario_to_dict",
    "dump_scenario",
    "resolve_scenario_path",
    "bundled_scenario_names",
    "SCENARIO_DIR_ENV",
]

SCENARIO_DIR_ENV = "DCGRID_SCENARIO_DIR"

_NUMBER = {"type": "number"}
_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}


def _scalar_or_array(item_schema):
    return {"oneOf": [item_schema,
                      {"type": "array", "items": item_schema, "minItems": 1}]}


_CHANNEL_COMMON = {
    "start": _NONNEG,
    "sigma": _NONNEG,
}

_CHANNEL_SCHEMA = {
    "type": "object",
    "properties": {
        "kind": {"enum": list(ATTACK_KINDS)},
        "c": _NUMBER,
        "p0": _NUMBER,
        "p1": _NUMBER,
        "s": _NUMBER,
        "o": _NUMBER,
        "g": _NUMBER,
        "kappa": _NONNEG,
        **_CHANNEL_COMMON,
    },
    "required": ["kind"],
    "additionalProperties": False,
    "allOf": [
        {
            "if": {"properties": {"kind": {"const": "none"}}},
            "then": {"propertyNames": {"enum": ["kind"]}},
        },
        {
            "if": {"properties": {"kind": {"const": "constant"}}},
            "then": {
                "required": ["c"],
                "propertyNames": {"enum": ["kind", "c", "start", "sigma"]},
            },
        },
        {
            "if": {"properties": {"kind": {"const": "polynomial"}}},
            "then": {
                "required": ["p0", "p1"],
                "propertyNames": {
                    "enum": ["kind", "p0", "p1", "start", "sigma"]},
            },
        },
        {
            "if": {"properties": {"kind": {"const": "exponential"}}},
            "then": {
                "required": ["s", "o", "g", "kappa"],
                "propertyNames": {
                    "enum": ["kind", "s", "o", "g", "kappa", "start",
                             "sigma"]},
            },
        },
    ],
}

SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "properties": {
        "version": {"const": 1},
        "description": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "params": {
            "type": "object",
            "properties": {
                "C": {"type": "array", "items": _POSITIVE, "minItems": 1},
                "L": {"type": "array", "items": _POSITIVE, "minItems": 1},
                "R": {"type": "array", "items": _POSITIVE, "minItems": 1},
                "C_b": _POSITIVE,
                "L_f": _POSITIVE,
                "C_l": _POSITIVE,
                "R_l": _POSITIVE,
                "r_l": _POSITIVE,
            },
            "required": ["C", "L", "R", "C_b", "L_f", "C_l", "R_l", "r_l"],
            "additionalProperties": False,
        },
        "equilibrium": {
            "type": "object",
            "properties": {
                "v_b_star": _POSITIVE,
                "d_l_star": {"type": "number", "minimum": 0, "maximum": 1},
                "bus_balance": {"enum": ["quadratic", "linear"]},
            },
            "additionalProperties": False,
        },
        "controller": {
            "type": "object",
            "properties": {
                "kind": {"enum": list(CONTROLLER_KINDS)},
                "alpha_source": _scalar_or_array(_POSITIVE),
                "alpha_load": _POSITIVE,
                "beta": _scalar_or_array(_POSITIVE),
                "q": _scalar_or_array(_POSITIVE),
                "rho0": _scalar_or_array(_NONNEG),
                "alpha_decay": _POSITIVE,
                "rho_max": _POSITIVE,
                "lambda": _scalar_or_array(_NONNEG),
                "i_s_max": _POSITIVE,
                "eps_vb": _POSITIVE,
            },
            "additionalProperties": False,
        },
        "attack": {
            "type": "object",
            "properties": {
                "relative_time": {"type": "boolean"},
                "channels": {"type": "array", "items": _CHANNEL_SCHEMA},
            },
            "required": ["channels"],
            "additionalProperties": False,
        },
        "sim": {
            "type": "object",
            "properties": {
                "T": _POSITIVE,
                "h": _POSITIVE,
                "h_c": _POSITIVE,
                "h_log": _POSITIVE,
                "divergence_threshold": _POSITIVE,
            },
            "additionalProperties": False,
        },
        "initial_state": {
            "oneOf": [{"type": "null"},
                      {"type": "array", "items": _NUMBER, "minItems": 1}],
        },
        "output_prefix": {"oneOf": [{"type": "null"}, {"type": "string"}]},
    },
    "required": ["version", "params"],
    "additionalProperties": False,
}


class ConfigError(Exception):
    """A scenario document failed validation.

    Carries a human-readable message already anchored to the offending
    file/key/line where that can be determined.
    """


def _anchor(text: str | None, key: str) -> str:
    if not text or not key:
        return ""
    idx = text.find(f'"{key}"')
    if idx < 0:
        return ""
    return f" (near line {text.count(chr(10), 0, idx) + 1})"


def _schema_error(exc: jsonschema.ValidationError, source: str,
                  text: str | None) -> ConfigError:
    path = "$" + "".join(
        f"[{p}]" if isinstance(p, int) else f".{p}"
        for p in exc.absolute_path)
    last_key = next((p for p in reversed(list(exc.absolute_path))
                     if isinstance(p, str)), "")
    return ConfigError(
        f"{source}: {path}: {exc.message}{_anchor(text, last_key)}")


def _validate(document: dict, source: str, text: str | None) -> None:
    validator = jsonschema.Draft202012Validator(SCENARIO_SCHEMA)
    errors = sorted(validator.iter_errors(document),
                    key=lambda e: list(e.absolute_path))
    if errors:
        raise _schema_error(errors[0], source, text)


def scenario_from_dict(document: dict, source: str = "<dict>",
                       text: str | None = None) -> Scenario:
    """Build a Scenario from a validated configuration document."""
    _validate(document, source, text)
    try:
        params = MicrogridParams(
            C=np.array(document["params"]["C"], dtype=float),
            L=np.array(document["params"]["L"], dtype=float),
            R=np.array(document["params"]["R"], dtype=float),
            C_b=float(document["params"]["C_b"]),
            L_f=float(document["params"]["L_f"]),
            C_l=float(document["params"]["C_l"]),
            R_l=float(document["params"]["R_l"]),
            r_l=float(document["params"]["r_l"]),
        )
        eq_doc = document.get("equilibrium", {})
        ctl_doc = dict(document.get("controller", {}))
        controller_kind = ctl_doc.pop("kind", "nominal")
        if "lambda" in ctl_doc:
            ctl_doc["lam"] = ctl_doc.pop("lambda")
        for key in ("alpha_source", "beta", "q", "rho0", "lam"):
            if key in ctl_doc and isinstance(ctl_doc[key], list):
                ctl_doc[key] = np.array(ctl_doc[key], dtype=float)
        config = ControllerConfig(**ctl_doc)
        sim_doc = document.get("sim", {})
        attack_doc = document.get("attack")
        if attack_doc is None:
            channels = tuple(ChannelAttack()
                             for _ in range(params.n_inputs))
            relative_time = True
        else:
            channels = tuple(ChannelAttack(**ch)
                             for ch in attack_doc["channels"])
            relative_time = bool(attack_doc.get("relative_time", True))
        attack = AttackSpec(
            channels=channels,
            seed=int(document.get("seed", 0)),
            relative_time=relative_time,
        )
        initial_state = document.get("initial_state")
        scenario = Scenario(
            params=params,
            v_b_target=float(eq_doc.get("v_b_star", 24.0)),
            d_l_target=float(eq_doc.get("d_l_star", 0.5)),
            quadratic_duty=(eq_doc.get("bus_balance", "quadratic")
                            == "quadratic"),
            controller_kind=controller_kind,
            config=config,
            attack=attack,
            T=float(sim_doc.get("T", 20.0)),
            h=float(sim_doc.get("h", 1e-5)),
            h_c=float(sim_doc.get("h_c", 1e-4)),
            h_log=float(sim_doc.get("h_log", 1e-3)),
            initial_state=(None if initial_state is None
                           else np.array(initial_state, dtype=float)),
            divergence_threshold=float(
                sim_doc.get("divergence_threshold", 1e6)),
            output_prefix=document.get("output_prefix"),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    return scenario


def _number_or_list(value):
    if isinstance(value, np.ndarray):
        return [float(v) for v in value]
    return float(value)


def _channel_to_dict(ch: ChannelAttack) -> dict:
    if ch.kind == "none":
        return {"kind": "none"}
    out = {"kind": ch.kind}
    if ch.kind == "constant":
        out["c"] = float(ch.c)
    elif ch.kind == "polynomial":
        out["p0"] = float(ch.p0)
        out["p1"] = float(ch.p1)
    else:
        out.update(s=float(ch.s), o=float(ch.o), g=float(ch.g),
                   kappa=float(ch.kappa))
    out["start"] = float(ch.start)
    out["sigma"] = float(ch.sigma)
    return out


def scenario_to_dict(scenario: Scenario,
                     description: str | None = None) -> dict:
    """Serialize with every default materialized (round-trip stable)."""
    p = scenario.params
    cfg = scenario.config
    doc = {
        "version": 1,
        "seed": int(scenario.attack.seed),
        "params": {
            "C": [float(v) for v in p.C],
            "L": [float(v) for v in p.L],
            "R": [float(v) for v in p.R],
            "C_b": float(p.C_b),
            "L_f": float(p.L_f),
            "C_l": float(p.C_l),
            "R_l": float(p.R_l),
            "r_l": float(p.r_l),
        },
        "equilibrium": {
            "v_b_star": float(scenario.v_b_target),
            "d_l_star": float(scenario.d_l_target),
            "bus_balance": ("quadratic" if scenario.quadratic_duty
                            else "linear"),
        },
        "controller": {
            "kind": scenario.controller_kind,
            "alpha_source": _number_or_list(cfg.alpha_source),
            "alpha_load": float(cfg.alpha_load),
            "beta": _number_or_list(cfg.beta),
            "q": _number_or_list(cfg.q),
            "rho0": _number_or_list(cfg.rho0),
            "alpha_decay": float(cfg.alpha_decay),
            "rho_max": float(cfg.rho_max),
            "lambda": _number_or_list(cfg.lam),
            "i_s_max": float(cfg.i_s_max),
            "eps_vb": float(cfg.eps_vb),
        },
        "attack": {
            "relative_time": bool(scenario.attack.relative_time),
            "channels": [_channel_to_dict(ch)
                         for ch in scenario.attack.channels],
        },
        "sim": {
            "T": float(scenario.T),
            "h": float(scenario.h),
            "h_c": float(scenario.h_c),
            "h_log": float(scenario.h_log),
            "divergence_threshold": float(scenario.divergence_threshold),
        },
        "initial_state": (None if scenario.initial_state is None
                          else [float(v) for v in scenario.initial_state]),
        "output_prefix": scenario.output_prefix,
    }
    if description is not None:
        doc["description"] = description
    return doc


def load_scenario(path) -> Scenario:
    """Read, validate and construct a scenario from a JSON file."""
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(document, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return scenario_from_dict(document, source=str(path), text=text)


def dump_scenario(scenario: Scenario, path,
                  description: str | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(scenario, description), fh, indent=2)
        fh.write("\n")


def bundled_scenario_names() -> list[str]:
    root = resources.files("dcgrid").joinpath("scenarios")
    return sorted(entry.name for entry in root.iterdir()
                  if entry.name.endswith(".json"))


def resolve_scenario_path(name: str) -> str:
    """Find a scenario file: literal path, then $DCGRID_SCENARIO_DIR,
    then the bundled scenario directory."""
    if os.path.exists(name):
        return name
    env_dir = os.environ.get(SCENARIO_DIR_ENV)
    if env_dir:
        candidate = os.path.join(env_dir, name)
        if os.path.exists(candidate):
            return candidate
    bundle = resources.files("dcgrid").joinpath("scenarios", name)
    if bundle.is_file():
        return str(bundle)
    raise FileNotFoundError(
        f"scenario file {name!r} not found (cwd, ${SCENARIO_DIR_ENV}, "
        f"bundled scenarios)")
