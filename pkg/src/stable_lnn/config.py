"""Flat, versioned key-value experiment configuration with preset inheritance.

File format (one ``key = value`` per line; ``#`` at line start or after a
space starts a comment)::

    version = 1
    preset = reg_eigen_l100
    seed = 3
    phases = [{"epochs": 30, "lr": 0.003, "eta_min": 1e-6}]

Values are parsed as JSON when possible and kept as strings otherwise.  A
``preset`` key pulls in the named preset first; later keys override it.
"""
from __future__ import annotations

import json
import math

from .errors import ConfigError

CONFIG_VERSION = 1

DEFAULTS = {
    "version": CONFIG_VERSION,
    "name": "run",
    "system": "double_pendulum",
    "seed": 0,
    # data
    "n_train": 10000,
    "n_val": 2000,
    "data_seed": 1,
    "train_q_low": None,
    "train_q_high": None,
    "train_qd_low": None,
    "train_qd_high": None,
    "scaling": "shared",
    # network
    "activation": "gelu",
    "k": 0.5,
    "layers": 3,
    "hidden_dim": 128,
    "quadratic_alpha": 1.0,
    "init_scheme": "default_kaiming_like",
    "dyt": False,
    "zero_output": False,
    # optimization
    "epochs": 60,
    "batch_size": 128,
    "lr": 3e-3,
    "weight_decay": 1e-6,
    "T_max": 30,
    "eta_min": 1e-6,
    "warm_restarts": False,
    "clip_norm": 1.0,
    "reg_mode": "none",
    "reg_lambda": 0.0,
    "reg_eps": 1e-8,
    "scale_window": 50,
    "phases": [],
    "max_skips": 50,
    # rollout
    "rollout_count": 4,
    "rollout_seed": 3,
    "rollout_t_end": None,
    "rollout_dt": None,
    "rtol": 1e-6,
    "atol": 1e-8,
    "p_coeff": 0.2,
    "i_coeff": 0.4,
    "d_coeff": 0.0,
    "truth_rtol": 1e-12,
    "truth_atol": 1e-12,
}

_FULL_NET = {"layers": 4, "hidden_dim": 500, "n_train": 60000, "n_val": 12000,
              "epochs": 300, "lr": 1e-3}

PRESETS = {
    "desk": {},
    # regularization study
    "reg_none": {"name": "reg_none"},
    "reg_eigen_l100": {"name": "reg_eigen_l100", "reg_mode": "eigen", "reg_lambda": 100.0},
    "reg_sylvester_l100": {"name": "reg_sylvester_l100", "reg_mode": "sylvester", "reg_lambda": 100.0},
    # scaling study
    "scaling_physical": {"name": "scaling_physical", "scaling": "shared"},
    "scaling_none": {"name": "scaling_none", "scaling": "none"},
    "scaling_dyt": {"name": "scaling_dyt", "scaling": "none", "dyt": True},
    # activations
    "act_gelu": {"name": "act_gelu", "activation": "gelu"},
    "act_xtanhk": {"name": "act_xtanhk", "activation": "xtanhk", "k": 0.5},
    "act_softplus": {"name": "act_softplus", "activation": "softplus"},
    "act_hybrid": {"name": "act_hybrid", "activation": "hybrid_softplus_quadratic"},
    # prior-work architectures
    "cranmer_init": {"name": "cranmer_init", "activation": "softplus", "quadratic_alpha": 0.0,
                     "init_scheme": "cranmer"},
    "liu_tricks": {"name": "liu_tricks", "activation": "hybrid_softplus_quadratic",
                   "quadratic_alpha": 1.0},
    # other systems at desk scale
    "spring_pendulum": {"name": "spring_pendulum", "system": "spring_pendulum", "lr": 1.5e-3,
                        "eta_min": 1e-7, "reg_mode": "sylvester", "reg_lambda": 100.0},
    "triple_pendulum": {"name": "triple_pendulum", "system": "triple_pendulum", "eta_min": 1e-7,
                        "reg_mode": "sylvester", "reg_lambda": 100.0},
    "sphere_geodesic": {"name": "sphere_geodesic", "system": "sphere_geodesic",
                        "reg_mode": "sylvester", "reg_lambda": 100.0},
    "ads4_lorentzian": {"name": "ads4_lorentzian", "system": "ads4_geodesic", "eta_min": 1e-7,
                        "reg_mode": "lorentzian", "reg_lambda": 100.0},
    # full-size settings, far beyond desk budgets
    "full_double_pendulum": dict(_FULL_NET, name="full_double_pendulum",
                                  train_q_low=[-3 * math.pi] * 2, train_q_high=[3 * math.pi] * 2,
                                  reg_mode="sylvester", reg_lambda=100.0),
    "full_multiphase_double_pendulum": dict(
        _FULL_NET, name="full_multiphase_double_pendulum", reg_mode="sylvester", reg_lambda=100.0,
        phases=[
            {"epochs": 300, "lr": 1e-3, "eta_min": 1e-6, "bounds": "train"},
            {"epochs": 200, "lr": 5e-4, "eta_min": 1e-7, "bounds": "train"},
            {"epochs": 200, "lr": 1e-4, "eta_min": 1e-8, "bounds": "train"},
        ]),
}


def resolve(overrides=None, preset=None):
    """Merge defaults, an optional preset and overrides; validate keys."""
    cfg = dict(DEFAULTS)
    overrides = dict(overrides or {})
    preset = overrides.pop("preset", preset)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg.update(PRESETS[preset])
        cfg["preset"] = preset
    for key, value in overrides.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r}")
        cfg[key] = value
    if cfg.get("version") != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {cfg.get('version')!r}")
    return cfg


def parse_value(text):
    text = text.strip()
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        low = text.lower()
        if low in ("true", "false"):
            return low == "true"
        if low in ("none", "null"):
            return None
        return text


def parse(text):
    """Parse config text into an override dict (not yet resolved)."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        line = line.split(" #", 1)[0].strip()
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def load(path):
    with open(path) as fh:
        return resolve(parse(fh.read()))


def dump(cfg):
    """Serialize a resolved config; ``load(dump(cfg))`` reproduces it."""
    lines = [f"version = {cfg.get('version', CONFIG_VERSION)}"]
    for key in DEFAULTS:
        if key == "version":
            continue
        lines.append(f"{key} = {json.dumps(cfg.get(key, DEFAULTS[key]))}")
    return "\n".join(lines) + "\n"
