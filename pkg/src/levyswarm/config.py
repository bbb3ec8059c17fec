"""Sectioned TOML run configuration: defaults, file, then command-line overrides."""

from __future__ import annotations

import copy
import hashlib
import json
import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

THREADS_ENV = "LEVYSWARM_THREADS"


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "seed": 0,
    "threads": 1,
    "model": {"alpha": 1.3},
    "grid": {"nx": 100, "ny": 80, "boundary": "neumann_mirror"},
    "pde": {
        "dt": 1.0,
        "t_end": 60.0,
        "mobility_mode": "nonlinear",
        "store_every": 10,
        "out_prefix": "step",
        "normalize_mass": False,
        "ell": 0.0,
        "kernel_range": 10.0,
        "linear_solver_tol": 1e-10,
        "linear_solver_max_iter": 500,
    },
    "micro": {
        "dt": 0.5,
        "n_steps": 120,
        "boundary": "reflecting",
        "collisions": True,
        "collision_resets_clock": True,
        "kernel_range": 10.0,
        "store_every": 10,
        "hist_nx": 50,
        "hist_ny": 40,
        "unit_mass": False,
        "out_prefix": "step",
    },
    "hyper": {
        "dt": 1.0,
        "t_end": 100.0,
        "nx": 64,
        "ny": 64,
        "lx": 200.0,
        "ly": 200.0,
        "amplitude": 0.1,
        "angle_amplitude": 0.5,
        "store_every": 10,
        "kinetic_limit": False,
        "out_prefix": "step",
        "zeta": 0.0,
        "kappa_align": 2.0,
    },
    "coverage": {
        "alphas": [1.3, 1.5, 1.7, 1.9],
        "n_list": [20],
        "dt": 1.0,
        "t_end": 60.0,
        "level": 0.5,
        "normalize_mass": False,
        "cluster_check": False,
        "t_early": 0.1,
    },
    "xval": {
        "alpha": 1.3,
        "n_walkers": 100000,
        "nx": 128,
        "ny": 128,
        "lx": 200.0,
        "ly": 160.0,
        "checkpoints": [25.0, 50.0, 100.0],
        "epsilon_kinetic": 0.5,
        "compare_factor": 4,
        "pde_dt": 0.25,
    },
}


def load_toml(path: str | os.PathLike) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc


def merge(base: dict, override: dict, path: str = "") -> dict:
    """Deep merge; keys unknown to ``base`` are rejected except inside ``model``."""
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}{key}"
        if key not in out and path != "model.":
            raise ConfigError(f"unknown config key: {where}")
        if isinstance(out.get(key), dict) and not isinstance(val, dict):
            raise ConfigError(f"config key {where} must be a table")
        if isinstance(val, dict):
            out[key] = merge(out.get(key, {}), val, where + ".")
        else:
            out[key] = val
    return out


def resolve_threads(flag: int | None, config_value: int | None) -> int:
    """--threads, then LEVYSWARM_THREADS, then the config file, then 1."""
    if flag is not None:
        n = flag
    elif os.environ.get(THREADS_ENV):
        try:
            n = int(os.environ[THREADS_ENV])
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer") from exc
    else:
        n = config_value or 1
    if n < 1:
        raise ConfigError(f"threads = {n} must be >= 1")
    return int(n)


def build_config(path=None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        cfg = merge(cfg, load_toml(path))
    if overrides:
        cfg = merge(cfg, overrides)
    return cfg


def config_hash(cfg: dict) -> str:
    """sha256 of the canonical JSON form."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()
