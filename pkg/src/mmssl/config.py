"""Run profiles: ``desk`` (one-CPU scale) and ``paper`` (published scale)."""
from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

from .errors import InvalidConfig

PROFILES = ("desk", "paper")


def load_profile(name: str) -> dict:
    if name not in PROFILES:
        raise InvalidConfig(f"unknown profile {name!r}; choose from {PROFILES}")
    text = resources.files("mmssl").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def deep_update(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_update(out[key], value)
        else:
            out[key] = value
    return out


def resolve_config(profile: str = "desk", config_path: str | Path | None = None) -> dict:
    """Profile defaults overlaid with an optional user JSON file."""
    cfg = load_profile(profile)
    if config_path is not None:
        try:
            user = json.loads(Path(config_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"cannot read config {config_path}: {exc}") from exc
        if not isinstance(user, dict):
            raise InvalidConfig("config file must hold a JSON object")
        cfg = deep_update(cfg, user)
    return cfg
