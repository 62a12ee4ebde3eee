"""Versioned JSON configuration shared by every CLI command.

A config document is ``{"version": 1, <section>: {...}, ...}``. Every section
is optional and unknown keys anywhere are errors, so a typo can never silently
fall back to a default.
"""

from __future__ import annotations

import copy

CONFIG_VERSION = 1

# section -> key -> default
SCHEMA: dict[str, dict] = {
    "synth": {
        "frames": 1000, "sequences": 4, "test_frames": 1000, "angle_walk_sigma": 0.3,
        "limb_correlation": 0.8, "angle_limit": 0.9,
    },
    "grouping": {
        "n_g": 10, "m_g": 3, "lambda": 3.0, "strategy": "similarity", "n_t": None,
        "similarity_frames": 1000, "dedup": False, "max_groups": None,
    },
    "train": {
        "hidden": 64, "epochs": 10, "batch_size": 64, "learning_rate": 1e-3, "lr_decay": 0.96,
        "rmsprop_rho": 0.9, "rmsprop_eps": 1e-8, "dropout_rate": 0.1, "leaky_slope": 0.01, "norm": "auto",
        "residual": True, "max_norm": None, "shared_lifter": False, "shared_budget": "per_network",
        "use_aggregation_loss": True,
        "consensus_iters": 200, "alpha": 100.0, "e2e_epochs": 1,
    },
    "heatmaps": {
        "enabled": False, "size": 64, "sigma2": 3.0, "noise_sigma": 0.02, "occlusion_prob": 0.0, "frames": 200,
    },
    "admm": {
        "objective": "l21", "mu0": 1e-2, "mu_growth": 1.1, "mu_max": 10.0, "tol": 1e-8, "max_iter": 2000,
    },
    "eval": {"rigid": False},
    "sweep": {"n_g": []},
}
TOP_LEVEL = {"version", "seed", "output_dir"} | set(SCHEMA)


class ConfigError(ValueError):
    pass


def _type_ok(default, value) -> bool:
    if default is None or value is None:
        return True
    if isinstance(default, bool):
        return isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float)) and not isinstance(value, bool)
    if isinstance(default, int):
        return isinstance(value, int) and not isinstance(value, bool)
    if isinstance(default, list):
        return isinstance(value, list)
    return isinstance(value, type(default))


def resolve(doc: dict) -> dict:
    """Validate ``doc`` and fill every section with defaults."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    if doc.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config version must be {CONFIG_VERSION}, got {doc.get('version')!r}")
    unknown = set(doc) - TOP_LEVEL
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    out = {"version": CONFIG_VERSION, "seed": seed, "output_dir": doc.get("output_dir")}
    for section, defaults in SCHEMA.items():
        given = doc.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section {section!r} must be an object")
        bad = set(given) - set(defaults)
        if bad:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(bad)}")
        merged = copy.deepcopy(defaults)
        for k, v in given.items():
            if not _type_ok(defaults[k], v):
                raise ConfigError(f"{section}.{k}: expected {type(defaults[k]).__name__}, got {v!r}")
            merged[k] = v
        out[section] = merged
    return out
