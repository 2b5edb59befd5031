"""Layered run configuration: built-in defaults, then a JSON file, then flags.

The built-in layer is ``defaults.json`` next to this module. Every section
maps onto one dataclass:

    plant        -> PlantConfig
    calibration  -> nominal period/width, open-loop steps, seed
    experiment   -> push count, impulse range, seed, start side, learner freeze
    learning     -> GridSpec
    analysis     -> fall-probability bin width, efficiency floor

Errors are raised as ConfigError with a dotted field path.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import fields
from importlib import resources
from pathlib import Path
from typing import Optional

from capstep.balance import Nominal
from capstep.learning import GridSpec
from capstep.plant import PlantConfig


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the field path."""


def builtin_defaults() -> dict:
    return json.loads(resources.files("capstep").joinpath("defaults.json").read_text())


def _merge(base: dict, layer: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in layer.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown field")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where}: expected an object")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def parse_override(text: str) -> dict:
    """``a.b=value`` to a nested dict; the value is read as JSON, else as a string."""
    key, sep, raw = text.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"{text}: expected path=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node: dict = {}
    root = node
    parts = key.strip().split(".")
    for part in parts[:-1]:
        node[part] = {}
        node = node[part]
    node[parts[-1]] = value
    return root


def resolve(path: Optional[str] = None, overrides=()) -> dict:
    """Merge the layers and validate; returns the effective config as a plain dict."""
    cfg = builtin_defaults()
    if path is not None:
        p = Path(path)
        try:
            layer = json.loads(p.read_text())
        except OSError as exc:
            raise ConfigError(f"{p}: cannot read ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(layer, dict):
            raise ConfigError(f"{p}: expected a JSON object")
        cfg = _merge(cfg, layer)
    for item in overrides:
        cfg = _merge(cfg, parse_override(item) if isinstance(item, str) else item)
    validate(cfg)
    return cfg


def _number(cfg: dict, path: str, integer: bool = False):
    section, _, key = path.partition(".")
    value = cfg[section][key]
    if value is None:
        raise ConfigError(f"{path}: missing value")
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if integer and not float(value).is_integer():
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{path}: must be finite")
    return int(value) if integer else float(value)


def _pair(cfg: dict, path: str) -> tuple:
    section, _, key = path.partition(".")
    value = cfg[section][key]
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(f"{path}: expected two numbers")
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{path}: expected two finite numbers, got {value!r}")
    return float(value[0]), float(value[1])


def plant_config(cfg: dict) -> PlantConfig:
    kw = {}
    for f in fields(PlantConfig):
        if f.name == "sensor_noise_std":
            kw[f.name] = _pair(cfg, "plant.sensor_noise_std")
        else:
            kw[f.name] = _number(cfg, f"plant.{f.name}")
    return PlantConfig(**kw)


def grid_spec(cfg: dict) -> GridSpec:
    return GridSpec(_pair(cfg, "learning.y_bounds"), _pair(cfg, "learning.vy_bounds"),
                    _number(cfg, "learning.ny", True), _number(cfg, "learning.nvy", True),
                    _number(cfg, "learning.eta"))


def nominal(cfg: dict) -> Nominal:
    return Nominal(_number(cfg, "calibration.period"), _number(cfg, "calibration.width"))


def validate(cfg: dict) -> None:
    for section in ("plant", "calibration", "experiment", "learning", "analysis"):
        if not isinstance(cfg.get(section), dict):
            raise ConfigError(f"{section}: missing section")
    pc = plant_config(cfg)
    try:
        pc.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        grid_spec(cfg).build()
    except ValueError as exc:
        raise ConfigError(f"learning: {exc}") from None
    nom = nominal(cfg)
    if nom.period <= 0:
        raise ConfigError("calibration.period: must be positive")
    if not pc.f_min <= nom.width <= pc.f_max:
        raise ConfigError("calibration.width: must lie within [plant.f_min, plant.f_max]")
    if _number(cfg, "calibration.n_steps", True) < 20:
        raise ConfigError("calibration.n_steps: must be at least 20")
    if _number(cfg, "calibration.seed", True) < 0:
        raise ConfigError("calibration.seed: must be non-negative")
    if _number(cfg, "experiment.n_pushes", True) <= 0:
        raise ConfigError("experiment.n_pushes: must be positive")
    lo, hi = _pair(cfg, "experiment.impulse_range")
    if lo > hi:
        raise ConfigError("experiment.impulse_range: must be ordered")
    seed = _number(cfg, "experiment.seed", True)
    if not 0 <= seed < 2 ** 64:
        raise ConfigError("experiment.seed: must be a 64-bit unsigned integer")
    if cfg["experiment"]["initial_side"] not in ("left", "right"):
        raise ConfigError("experiment.initial_side: expected 'left' or 'right'")
    if not isinstance(cfg["experiment"]["freeze_learning"], bool):
        raise ConfigError("experiment.freeze_learning: expected true or false")
    if _number(cfg, "analysis.bin_width") <= 0:
        raise ConfigError("analysis.bin_width: must be positive")
    if _number(cfg, "analysis.efficiency_floor") < 0:
        raise ConfigError("analysis.efficiency_floor: must be non-negative")
