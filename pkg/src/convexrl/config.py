"""TOML config files: schema-checked loading, overrides, resolved copies.

The file mirrors the module structure: one table per component
(trainer, risk, solver, env, nets), every key validated against the
dataclass it populates. Unknown sections or keys are rejected with the
full key path so typos surface immediately instead of silently running
defaults. The resolved config can be serialized back to TOML; runs copy
it into their output directory as the reproducibility record.
"""

from __future__ import annotations

import sys
from dataclasses import replace
from enum import Enum
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .risk import CoefficientMode, RiskConfig
from .solver import SolverConfig
from .trainer import NetsConfig, TrainConfig
from .watertank import TankParams


class ConfigError(ValueError):
    """Malformed config file, unknown key, or out-of-range value."""


# Section name -> (target dataclass kwarg name, field name -> value kind).
# Kinds: "float" accepts int or float, "int" rejects bool, "int_list"
# is a homogeneous list, "mode" is a CoefficientMode value string.
SCHEMA: dict[str, dict[str, str]] = {
    "trainer": {
        "gamma": "float", "d": "float", "total_steps": "int",
        "warmup_steps": "int", "batch_size": "int", "tau": "float",
        "policy_delay": "int", "explore_noise": "float",
        "target_noise": "float", "target_noise_clip": "float",
        "bootstrap_iters": "int", "buffer_capacity": "int",
        "eval_episodes": "int", "seeds": "int_list",
    },
    "risk": {"alpha": "float", "coefficient_mode": "mode"},
    "solver": {
        "kappa": "float", "max_iters": "int", "tol": "float",
        "lr": "float", "restarts": "int", "warm_start": "bool",
    },
    "env": {
        "k_out1": "float", "k_out2": "float", "k_pump": "float",
        "dt": "float", "goal": "float", "l_crit": "float", "a_max": "float",
        "episode_len": "int", "substeps": "int",
        "init_low": "float", "init_high": "float",
    },
    "nets": {
        "widths": "int_list", "critic_lr": "float", "actor_lr": "float",
        "std_floor": "float", "safety_twin": "bool", "strict": "bool",
    },
}


def _coerce(path: str, kind: str, value):
    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path} must be a number, got {value!r}")
        return float(value)
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path} must be an integer, got {value!r}")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{path} must be a boolean, got {value!r}")
        return value
    if kind == "int_list":
        if not isinstance(value, list) or any(
                isinstance(v, bool) or not isinstance(v, int) for v in value):
            raise ConfigError(f"{path} must be a list of integers, got {value!r}")
        return list(value)
    if kind == "mode":
        allowed = [m.value for m in CoefficientMode]
        if value not in allowed:
            raise ConfigError(f"{path} must be one of {allowed}, got {value!r}")
        return CoefficientMode(value)
    raise AssertionError(kind)


def _section_kwargs(section: str, table) -> dict:
    if not isinstance(table, dict):
        raise ConfigError(f"config section [{section}] must be a table")
    kwargs = {}
    for key, value in table.items():
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key: {section}.{key}")
        kwargs[key] = _coerce(f"{section}.{key}", SCHEMA[section][key], value)
    return kwargs


def config_from_dict(data: dict) -> TrainConfig:
    """Build a TrainConfig from a parsed TOML tree, validating every key."""
    for section in data:
        if section not in SCHEMA:
            raise ConfigError(f"unknown config section: {section}")
    nested = {
        "risk": RiskConfig, "solver": SolverConfig,
        "env": TankParams, "nets": NetsConfig,
    }
    kwargs = _section_kwargs("trainer", data.get("trainer", {}))
    try:
        for section, cls in nested.items():
            kwargs[section] = cls(**_section_kwargs(section, data.get(section, {})))
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> TrainConfig:
    """Parse and validate a TOML config file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        data = tomllib.loads(p.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"failed to parse {p}: {exc}") from exc
    return config_from_dict(data)


def apply_overrides(cfg: TrainConfig, alpha: float | None = None,
                    seeds: list[int] | None = None) -> TrainConfig:
    """Command-line flags win over file values; validation reruns on replace."""
    try:
        if alpha is not None:
            cfg = replace(cfg, risk=replace(cfg.risk, alpha=alpha))
        if seeds is not None:
            cfg = replace(cfg, seeds=list(seeds))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def _toml_value(value) -> str:
    if isinstance(value, Enum):
        value = value.value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        return f'"{value}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise TypeError(f"cannot serialize {value!r}")


def resolved_toml(cfg: TrainConfig) -> str:
    """Serialize the full resolved config; load_config inverts this exactly."""
    objects = {"trainer": cfg, "risk": cfg.risk, "solver": cfg.solver,
               "env": cfg.env, "nets": cfg.nets}
    lines = []
    for section, obj in objects.items():
        lines.append(f"[{section}]")
        for key in SCHEMA[section]:
            lines.append(f"{key} = {_toml_value(getattr(obj, key))}")
        lines.append("")
    return "\n".join(lines)


def write_resolved_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(resolved_toml(cfg))
