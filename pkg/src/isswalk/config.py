"""Experiment configuration: YAML schema, validation, dotted-path overrides.

Schema (all sections optional; defaults shown):

    model:
      gravity: 9.81
      mass_scale: 1.0          # plant-side torso mass/inertia multiplier
      links: null              # optional explicit link table (see below)
      base: floating
      actuated_joints: [...]
      contact_frames: {name: [link_index, offset]}
    gait:
      artifact: builtin        # "builtin" or a path to a gait JSON
    controller:
      kind: fblin              # fblin | pd
      mode: state              # state | time
      eps: 60.0
      kp: 900.0
      kd: 60.0
      torque_limit: null
    disturbance:
      continuous: none         # none | constant | uniform_random | sinusoid
      magnitude: 0.0
      hold_dt: 0.02
      freq: 5.0
      phase_lag: 0.0
      impact_kick: 0.0
      clock_scale: 1.0
      clock_offset: 0.0
      mass_scale: 1.0
      seed: 0
    run:
      steps: 10
      sample_dt: 0.001
      seeds: 20
      magnitudes: [0.0, 0.5, 1.0, 2.0, 4.0]
      gamma1: 0.02             # Lyapunov decrease rate outside the ball
      gamma2: 0.04             # disturbance-margin split; needs
                               # (gamma1 + gamma2) P2 <= Q2 at controller.eps
      out_dir: null            # default: $ISSWALK_OUT or ./out

An explicit ``model.links`` entry is a list of
[name, mass, inertia, length, com_offset, parent, attach].
"""

from __future__ import annotations

import copy
import os

import yaml

from .errors import ConfigError

DEFAULTS: dict = {
    "model": {
        "gravity": 9.81,
        "mass_scale": 1.0,
        "links": None,
        "base": "floating",
        "actuated_joints": None,
        "contact_frames": None,
    },
    "gait": {"artifact": "builtin"},
    "controller": {
        "kind": "fblin",
        "mode": "state",
        "eps": 60.0,
        "kp": 900.0,
        "kd": 60.0,
        "torque_limit": None,
    },
    "disturbance": {
        "continuous": "none",
        "magnitude": 0.0,
        "hold_dt": 0.02,
        "freq": 5.0,
        "phase_lag": 0.0,
        "impact_kick": 0.0,
        "clock_scale": 1.0,
        "clock_offset": 0.0,
        "mass_scale": 1.0,
        "seed": 0,
    },
    "run": {
        "steps": 10,
        "sample_dt": 0.001,
        "seeds": 20,
        "magnitudes": [0.0, 0.5, 1.0, 2.0, 4.0],
        "gamma1": 0.02,
        "gamma2": 0.04,
        "out_dir": None,
    },
}

_CHOICES = {
    ("controller", "kind"): ("fblin", "pd"),
    ("controller", "mode"): ("state", "time"),
    ("disturbance", "continuous"):
        ("none", "constant", "uniform_random", "sinusoid"),
    ("model", "base"): ("pinned", "floating"),
}


def _merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        here = f"{path}.{k}" if path else k
        if k not in out:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _merge(out[k], v, here)
        else:
            out[k] = v
    return out


def apply_override(cfg: dict, dotted: str) -> None:
    """In-place override 'a.b.c=value' with YAML-parsed value."""
    if "=" not in dotted:
        raise ConfigError(f"override must be key.path=value: {dotted!r}")
    key, _, raw = dotted.partition("=")
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"unknown config key: {key}")
        node = node[p]
    leaf = parts[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"unknown config key: {key}")
    try:
        node[leaf] = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}")


def validate(cfg: dict) -> None:
    for (sec, key), choices in _CHOICES.items():
        v = cfg[sec][key]
        if v not in choices:
            raise ConfigError(
                f"{sec}.{key} must be one of {choices}, got {v!r}")
    d = cfg["disturbance"]
    for k in ("magnitude", "hold_dt", "freq", "impact_kick", "mass_scale"):
        if d[k] < 0:
            raise ConfigError(f"disturbance.{k} must be >= 0")
    if d["hold_dt"] <= 0:
        raise ConfigError("disturbance.hold_dt must be > 0")
    if d["clock_scale"] <= 0:
        raise ConfigError("disturbance.clock_scale must be > 0")
    c = cfg["controller"]
    if c["eps"] <= 0:
        raise ConfigError("controller.eps must be > 0")
    if c["kp"] < 0 or c["kd"] < 0 or (c["kp"] == 0 and c["kd"] == 0):
        raise ConfigError("controller gains must be >= 0 and not both zero")
    r = cfg["run"]
    if r["steps"] < 0:
        raise ConfigError("run.steps must be >= 0")
    if r["seeds"] < 1:
        raise ConfigError("run.seeds must be >= 1")
    if not r["magnitudes"]:
        raise ConfigError("run.magnitudes must be nonempty")
    g = cfg["gait"]["artifact"]
    if g != "builtin" and not os.path.exists(g):
        raise ConfigError(f"gait.artifact file not found: {g}")


def load_config(path: str | None, overrides=()) -> dict:
    """Merged + validated config; ``path`` None means pure defaults."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        if not os.path.exists(path):
            raise ConfigError(f"config file not found: {path}")
        try:
            with open(path) as f:
                user = yaml.safe_load(f) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}")
        if not isinstance(user, dict):
            raise ConfigError(f"config root must be a mapping: {path}")
        cfg = _merge(cfg, user)
    for ov in overrides:
        apply_override(cfg, ov)
    validate(cfg)
    return cfg


def model_from_config(cfg: dict):
    """RobotModel from the config's model section (default walker if no
    explicit link table)."""
    from .dynamics import Link, RobotModel
    from .walker import make_walker

    mc = cfg["model"]
    if mc["links"] is None:
        return make_walker(gravity=mc["gravity"], mass_scale=mc["mass_scale"])
    links = []
    for row in mc["links"]:
        name, mass, inertia, length, com, parent, attach = row
        links.append(Link(name, mass, inertia, length, com,
                          parent=parent, attach=attach))
    return RobotModel(
        links, base=mc["base"],
        actuated_joints=mc["actuated_joints"] or (),
        contact_frames={k: tuple(v)
                        for k, v in (mc["contact_frames"] or {}).items()},
        gravity=mc["gravity"],
    )


def default_out_dir(cfg: dict) -> str:
    return (cfg["run"]["out_dir"] or os.environ.get("ISSWALK_OUT") or "out")
