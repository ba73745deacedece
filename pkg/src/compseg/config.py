"""Run configuration: one JSON document, strict keys, materialized defaults.

Every artifact a run emits embeds the sha256 hash of the resolved document,
so downstream stages can refuse mixed-provenance inputs.
"""

from __future__ import annotations

import copy
import hashlib
import json

DEFAULTS = {
    "seed": 0,
    "lattice": [28, 28],
    "D": 32,
    "K": 20,
    "M": 2,
    "sigma": 65.0,
    "epsilon": 1e-3,
    "Q": 5,
    "n_outliers": 5,
    "dict_samples": 20000,
    "train_per_pose": 20,
    "background_maps": 8,
    "benchmark_per_level": 12,
    "threads": 1,
    "refine": {
        "max_iters": 10,
        "tol": 1e-6,
        "refit_coeffs": True,
    },
    "train": {
        "gamma1": 2.0,
        "gamma2": 1.0,
        "delta": 0.05,
        "lr": 0.01,
        "momentum": 0.9,
        "epochs": 10,
        "train_mu": True,
    },
    "world": {
        "c": 3,
        "m_true": 2,
        "parts_per_class": 5,
        "q_true": 3,
        "occluder_kernels": 3,
        "sigma_gen": 40.0,
        "context_like_cos": 0.70,
        "shift_range": 4,
    },
}


class ConfigError(ValueError):
    pass


def resolve_config(user: dict | None) -> dict:
    """Merge user settings over the defaults; unknown keys are rejected."""
    resolved = copy.deepcopy(DEFAULTS)
    if user:
        _merge(resolved, user, path="")
    return resolved


def _merge(base: dict, user: dict, path: str) -> None:
    for key, value in user.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key: {here}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here} must be an object")
            _merge(base[key], value, here)
        else:
            base[key] = value


def load_config(path) -> dict:
    if path is None:
        return resolve_config(None)
    with open(path) as fh:
        return resolve_config(json.load(fh))


def config_hash(resolved: dict) -> str:
    # execution-resource knobs do not change results and stay out of the hash
    hashed = {k: v for k, v in resolved.items() if k != "threads"}
    canon = json.dumps(hashed, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def dump_config(resolved: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(resolved, fh, sort_keys=True, indent=1)
