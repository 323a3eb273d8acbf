"""
Run configuration: TOML (or JSON) files with dotted-path overrides.

Schema (version 1)::

    scenario = "surveillance"      # or "quadratic"
    seed = 0

    [gains]        alpha1, alpha2
    [sim]          horizon, integrator ("rk45" | "rk4"), rel_tol, abs_tol,
                   step_size, sample_period, blowup
    [disturbance]  amplitude (0 disables), hold_period
    [graph]        file: optional adjacency .csv or edge-list .json
    [analysis]     certificate (bool), q1, q2, transient
    [surveillance] any field of SurveillanceConfig
    [quadratic]    any field of QuadraticConfig

A run manifest (``manifest.json``) is also accepted; its ``config`` entry is used.
"""

from __future__ import annotations

import copy
import json
import sys
from dataclasses import fields
from pathlib import Path

from .controller import Gains
from .scenarios import QuadraticConfig, SurveillanceConfig, config_dict
from .sim import DisturbanceSpec, SimConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
SCENARIOS = ("surveillance", "quadratic")


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "scenario": "surveillance",
    "seed": 0,
    "gains": {"alpha1": 0.75, "alpha2": 0.01},
    "sim": {
        "horizon": 200.0,
        "integrator": "rk45",
        "rel_tol": 1e-6,
        "abs_tol": 1e-8,
        "step_size": 1e-3,
        "sample_period": 0.5,
        "blowup": 1e8,
    },
    "disturbance": {"amplitude": 0.0, "hold_period": 0.1},
    "graph": {"file": ""},
    "analysis": {"certificate": False, "q1": 1.0, "q2": 1.0, "transient": 0.0},
    "surveillance": config_dict(SurveillanceConfig()),
    "quadratic": config_dict(QuadraticConfig()),
}


def _merge(base: dict, new: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in new.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a section")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def parse_value(text: str):
    """``--set`` values: JSON literals (numbers, booleans, lists) or bare strings."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> dict:
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like path.to.key=value")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    node = cfg
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigError(f"unknown config section in {path!r}")
        node = node[key]
    if keys[-1] not in node or isinstance(node[keys[-1]], dict):
        raise ConfigError(f"unknown config key {path!r}")
    node[keys[-1]] = parse_value(raw.strip())
    return cfg


def load_config(path=None, overrides=(), seed: int | None = None) -> dict:
    """Read a config file, merge it over the defaults and apply overrides."""
    raw = {}
    base_dir = None
    if path is not None:
        path = Path(path)
        base_dir = path.parent
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            raw = json.loads(text) if path.suffix.lower() == ".json" else tomllib.loads(text)
        except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        if "config" in raw and "manifest_version" in raw:
            raw = raw["config"]
    cfg = _merge(DEFAULTS, raw)
    for item in overrides:
        apply_override(cfg, item)
    if seed is not None:
        cfg["seed"] = int(seed)
    graph_file = cfg["graph"]["file"]
    if graph_file and base_dir is not None and not Path(graph_file).is_absolute():
        candidate = base_dir / graph_file
        if candidate.exists():
            cfg["graph"]["file"] = str(candidate)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    if cfg["scenario"] not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}, got {cfg['scenario']!r}")
    try:
        sim_config(cfg)
        scenario_config(cfg)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _build(cls, section: dict):
    names = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in section.items():
        if key not in names:
            raise ConfigError(f"unknown field {key!r} for {cls.__name__}")
        kwargs[key] = tuple(value) if isinstance(value, list) and key.endswith("_range") else value
    return cls(**kwargs)


def scenario_config(cfg: dict):
    if cfg["scenario"] == "surveillance":
        sc = _build(SurveillanceConfig, cfg["surveillance"])
        sc.validate()
        return sc
    return _build(QuadraticConfig, cfg["quadratic"])


def sim_config(cfg: dict) -> SimConfig:
    g = cfg["gains"]
    s = cfg["sim"]
    dist = cfg["disturbance"]
    disturbance = DisturbanceSpec(float(dist["amplitude"]), float(dist["hold_period"]))
    return SimConfig(
        gains=Gains(float(g["alpha1"]), float(g["alpha2"])),
        horizon=float(s["horizon"]),
        integrator=str(s["integrator"]),
        rel_tol=float(s["rel_tol"]),
        abs_tol=float(s["abs_tol"]),
        step_size=float(s["step_size"]),
        sample_period=float(s["sample_period"]),
        seed=int(cfg["seed"]),
        disturbance=disturbance if disturbance.amplitude > 0 else None,
        blowup=float(s["blowup"]),
    )
