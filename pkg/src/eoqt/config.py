"""Run configuration: JSON schema, validation, and policy/observable parsing."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import jsonschema

from .ensemble import Eoqt, FixedHomodyne, FixedNumber, Observable, RecordSpec
from .models import ModelSpec, build_model

_LOCAL_OPS = {
    "sx": np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
    "sy": np.array([[0.0, -1j], [1j, 0.0]], dtype=complex),
    "sz": np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
}

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["model", "policy", "dt", "t_final", "trajectories", "chi_max", "seed"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object",
            "required": ["name", "params"],
            "additionalProperties": False,
            "properties": {
                "name": {"enum": ["bell", "ising", "eit", "rbc"]},
                "params": {"type": "object"},
            },
        },
        "policy": {
            "type": "object",
            "required": ["type"],
            "additionalProperties": False,
            "properties": {
                "type": {"enum": ["number", "homodyne", "eoqt"]},
                "phases": {
                    "anyOf": [
                        {"type": "number"},
                        {"type": "array", "items": {"type": "number"}},
                    ]
                },
                "cut": {"type": "integer", "minimum": 1},
            },
        },
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "t_final": {"type": "number", "exclusiveMinimum": 0},
        "trajectories": {"type": "integer", "minimum": 1},
        "chi_max": {"type": "integer", "minimum": 1},
        "trunc_threshold": {"type": "number", "minimum": 0},
        "cuts": {
            "anyOf": [
                {"enum": ["all", "half"]},
                {"type": "array", "items": {"type": "integer", "minimum": 1}},
            ]
        },
        "observables": {"type": "array", "items": {"type": "string"}},
        "seed": {"type": "integer", "minimum": 0},
        "workers": {"type": "integer", "minimum": 1},
        "record_points": {"type": "integer", "minimum": 2},
        "backend": {"enum": ["auto", "mps", "dense"]},
        "canonicalize": {"enum": ["auto", "substep", "layer"]},
        "strategy": {"enum": ["auto", "sequential", "batched"]},
        "frozen_circuit_seed": {"type": ["integer", "null"]},
        "permute_channels": {"type": "boolean"},
        "out_dir": {"type": "string"},
        "save_trajectories": {"type": "boolean"},
    },
}

DEFAULTS = {
    "trunc_threshold": 1e-12,
    "cuts": "all",
    "observables": [],
    "workers": 1,
    "record_points": 51,
    "backend": "auto",
    "canonicalize": "auto",
    "strategy": "auto",
    "frozen_circuit_seed": None,
    "permute_channels": False,
    "out_dir": "out",
    "save_trajectories": False,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    raw: dict
    model: ModelSpec
    policy: object
    record: RecordSpec = field(default=None)

    def __getattr__(self, name):
        try:
            return self.raw[name]
        except KeyError as exc:
            raise AttributeError(name) from exc


def parse_local_op(token: str, d: int) -> tuple[int, np.ndarray]:
    """'sz:0' or 'pop:1:2' -> (site, d x d matrix)."""
    parts = token.split(":")
    kind = parts[0]
    if kind == "pop":
        if len(parts) != 3:
            raise ConfigError(f"observable factor {token!r}: expected pop:site:level")
        site, level = int(parts[1]), int(parts[2])
        op = np.zeros((d, d), dtype=complex)
        if not 0 <= level < d:
            raise ConfigError(f"observable factor {token!r}: level outside 0..{d - 1}")
        op[level, level] = 1.0
        return site, op
    if kind in _LOCAL_OPS:
        if len(parts) != 2:
            raise ConfigError(f"observable factor {token!r}: expected {kind}:site")
        if d != 2:
            raise ConfigError(f"observable factor {token!r}: Pauli ops need d=2")
        return int(parts[1]), _LOCAL_OPS[kind]
    raise ConfigError(f"unknown observable factor {token!r}")


def parse_observable(expr: str, n: int, d: int) -> Observable:
    """Products of local factors joined by '*', e.g. 'sz:0*sz:1'."""
    factors = []
    for token in expr.split("*"):
        site, op = parse_local_op(token.strip(), d)
        if not 0 <= site < n:
            raise ConfigError(f"observable {expr!r}: site {site} outside 0..{n - 1}")
        factors.append((site, op))
    return Observable(name=expr, factors=factors)


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        data = json.load(fh)
    if "config" in data and isinstance(data.get("config"), dict):
        data = data["config"]  # accept a manifest round-trip
    return parse_config(data)


def parse_config(data: dict) -> RunConfig:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        msgs = [
            "$" + "".join(f".{p}" if isinstance(p, str) else f"[{p}]"
                          for p in e.absolute_path) + ": " + e.message
            for e in errors
        ]
        raise ConfigError("; ".join(msgs))
    cfg = dict(DEFAULTS)
    cfg.update(data)
    try:
        model = build_model(cfg["model"]["name"], cfg["model"]["params"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"$.model.params: {exc}") from exc
    if cfg["dt"] * model.max_rate() > 0.1 + 1e-12:
        raise ConfigError("$.dt: dt * max channel rate exceeds the 0.1 guard")

    ptype = cfg["policy"]["type"]
    m = len(model.channels)
    if ptype == "number":
        policy = FixedNumber()
    elif ptype == "homodyne":
        phases = cfg["policy"].get("phases", 0.0)
        if isinstance(phases, list):
            if len(phases) != m:
                raise ConfigError(
                    f"$.policy.phases: expected {m} entries (one per channel)")
            policy = FixedHomodyne(tuple(float(p) for p in phases))
        else:
            policy = FixedHomodyne.uniform(float(phases), m)
    else:
        policy = Eoqt(cut=cfg["policy"].get("cut"))

    cuts_cfg = cfg["cuts"]
    if cuts_cfg == "all":
        cuts = tuple(range(1, model.n))
    elif cuts_cfg == "half":
        cuts = (model.n // 2,)
    else:
        cuts = tuple(int(c) for c in cuts_cfg)
        for c in cuts:
            if not 1 <= c <= model.n - 1:
                raise ConfigError(f"$.cuts: cut {c} outside 1..{model.n - 1}")
    observables = [parse_observable(s, model.n, model.d) for s in cfg["observables"]]
    record = RecordSpec(cuts=cuts, observables=observables,
                        n_points=cfg["record_points"])
    return RunConfig(raw=cfg, model=model, policy=policy, record=record)
