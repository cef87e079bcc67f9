"""Layered run configuration: built-in defaults, then a JSON file, then ``key=value`` flags."""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

SEED_ENV = "GRAINPIPE_SEED"

DEFAULTS: dict = {
    "seed": 0,
    "workers": 1,
    "standardize": {"chessboard_pattern": 4, "clamp": False, "size_tolerance": 1e-3},
    "markers": {"window": 21, "min_contrast": 0.15, "min_area": 30},
    "grid": {
        "min_angle_deg": 70.0,
        "dish_band": [0.25, 0.48],
        "dish_fraction": 0.95,
        "marker_grow": 1.6,
        "vote_fraction": 0.3,
        "rho_tol": 10.0,
        "theta_tol_deg": 2.0,
        "refine_points": True,
    },
    "tracking": {"inlier_tol_px": 2.0},
    "cells": {"min_area": 25.0},
    "spectra": {"trim": 10, "natural_log": False, "clip_reflectance": False, "band_nm": [900.0, 1700.0]},
}


def merge(base: dict, extra: dict) -> dict:
    """Recursive dict merge; ``extra`` wins, nested dicts are merged key by key."""
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def parse_override(text: str) -> dict:
    """``"grid.rho_tol=8"`` -> ``{"grid": {"rho_tol": 8}}``; values parse as JSON when they can."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ValueError(f"override {text!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node: dict = {}
    leaf = node
    parts = key.strip().split(".")
    for p in parts[:-1]:
        leaf = leaf.setdefault(p, {})
    leaf[parts[-1]] = value
    return node


def _check_keys(cfg: dict, ref: dict, prefix: str = "") -> None:
    for key, value in cfg.items():
        if key not in ref:
            raise KeyError(f"unknown config key {prefix + key!r}")
        if isinstance(ref[key], dict):
            if not isinstance(value, dict):
                raise TypeError(f"config key {prefix + key!r} must be a mapping")
            _check_keys(value, ref[key], prefix + key + ".")


def load_config(path=None, overrides=(), env=None) -> dict:
    """Defaults, then the JSON file at ``path``, then ``overrides``.

    ``GRAINPIPE_SEED`` replaces the default seed but not one set explicitly
    by the file or a flag.
    """
    env = os.environ if env is None else env
    cfg = copy.deepcopy(DEFAULTS)
    if env.get(SEED_ENV):
        cfg["seed"] = int(env[SEED_ENV])
    layers = []
    if path is not None:
        layers.append(json.loads(Path(path).read_text()))
    layers.extend(parse_override(o) for o in overrides)
    for layer in layers:
        _check_keys(layer, DEFAULTS)
        cfg = merge(cfg, layer)
    return cfg


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=1, sort_keys=True) + "\n"
