"""Run configuration: defaults, JSON config files and dotted-path overrides."""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema

DEFAULTS: dict = {
    "seed": 0,
    "scene": {
        "height": 64,
        "width": 64,
        "region_grid": [2, 2],
        "depth_range": [1.0, 10.0],
        "noise_sigma": 0.2,
        "gamma": 0.75,
        "slope": 0.5,
    },
    "data": {"n_train": 200, "n_test": 50, "uts_ratio": 0.5},
    # focal length in pixels; principal point is the image centre
    "camera": {"focal": 64.0},
    "train": {"lr": 0.01, "momentum": 0.9, "steps": 1500, "batch": 4, "pixels_per_scene": 1024},
    "ablation": {
        "ratios": [0.05, 0.1, 0.2, 0.5, 1.0],
        "schemes": ["GP2", "UTS_ONLY"],
        "seeds": [0, 1, 2],
        "control": True,
        "jobs": 1,
    },
    "gradcheck": {"points": 100, "n_params": 50, "h": 1e-5, "height": 16, "width": 16, "tolerance": 1e-4},
    "geometry": {
        "c1": 1.0,
        "c2": 0.2,
        "focal": 1.0,
        "corner": [[1.0, 0.0, 2.0], [0.0, 0.0, 2.0], [0.0, 0.0, 3.0]],
        "depth_pairs": [[2.0, 4.0], [1.0, 10.0]],
        "lines": [[0.0, 0.0, 2.0], [0.02, 0.0, 2.0], [0.01, 0.03, 1.5]],
        "samples": 33,
        "extent": 32.0,
    },
    "stereo": {"max_discrepancy": 8.0, "min_valid_fraction": 0.8, "min_range": 8.0},
}


class ConfigError(ValueError):
    pass


def schema(name: str) -> dict:
    return json.loads(resources.files("gp2depth.harness").joinpath("schemas", f"{name}.schema.json").read_text())


def validate(obj, name: str) -> None:
    try:
        jsonschema.validate(obj, schema(name))
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{name}: {path}: {exc.message}") from None


def _merge(base: dict, update: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        if key not in out:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        if isinstance(out[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {prefix + key!r} must be an object")
            out[key] = _merge(out[key], value, prefix + key + ".")
        else:
            out[key] = value
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(cfg: dict, assignment: str) -> dict:
    """Apply ``a.b.c=value``; the value is parsed as JSON, falling back to a string."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    path, text = assignment.split("=", 1)
    keys = path.strip().split(".")
    update: dict = {}
    node = update
    for k in keys[:-1]:
        node[k] = {}
        node = node[k]
    node[keys[-1]] = _parse_value(text)
    return _merge(cfg, update)


def load_config(path=None, overrides=(), seed: int | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = _merge(cfg, user)
    for assignment in overrides:
        cfg = apply_override(cfg, assignment)
    if seed is not None:
        cfg["seed"] = seed
    validate(cfg, "config")
    return cfg
