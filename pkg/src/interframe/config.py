"""Config plumbing: dataclass <-> dict <-> YAML, plus dotted overrides.

All run configuration lives in nested dataclasses (TrainConfig and its
sub-configs). This module converts them to plain dicts for YAML files and
checkpoints, rebuilds them strictly (unknown keys are errors, not typos to
silently drop), and applies command-line overrides of the form
`section.key=value` with values parsed as YAML scalars.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path

import yaml

from .trainer import TrainConfig


def config_to_dict(cfg) -> dict:
    if not dataclasses.is_dataclass(cfg):
        raise TypeError(f"expected a config dataclass, got {type(cfg).__name__}")
    return dataclasses.asdict(cfg)


def _unwrap_optional(tp):
    """X | None -> X; anything else unchanged."""
    if isinstance(tp, types.UnionType) or typing.get_origin(tp) is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if len(args) == 1:
            return args[0]
    return tp


def _coerce(value, tp, key: str):
    tp = _unwrap_optional(tp)
    if value is None:
        return None
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise TypeError(f"{key}: expected a mapping for {tp.__name__}, got {value!r}")
        return _from_dict(tp, value, key)
    origin = typing.get_origin(tp)
    if origin in (tuple, list):
        if not isinstance(value, (list, tuple)):
            raise TypeError(f"{key}: expected a sequence, got {value!r}")
        return origin(value)
    if tp is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    # YAML 1.1 reads "1e-3" as a string; accept numeric strings for number slots
    if tp in (int, float) and isinstance(value, str):
        try:
            return tp(value)
        except ValueError:
            raise TypeError(f"{key}: expected {tp.__name__}, got {value!r}") from None
    if tp in (int, float, str, bool) and not isinstance(value, tp):
        raise TypeError(f"{key}: expected {tp.__name__}, got {type(value).__name__} {value!r}")
    return value


def _from_dict(cls, data: dict, prefix: str = "") -> object:
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        where = f" in {prefix}" if prefix else ""
        raise KeyError(f"unknown config keys{where}: {sorted(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        key = f"{prefix}.{f.name}" if prefix else f.name
        kwargs[f.name] = _coerce(data[f.name], hints[f.name], key)
    return cls(**kwargs)


def config_from_dict(data: dict, cls=TrainConfig) -> TrainConfig:
    if not isinstance(data, dict):
        raise TypeError(f"config must be a mapping, got {type(data).__name__}")
    return _from_dict(cls, data)


def load_config(path: str | Path) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    with path.open() as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data)


def save_config(path: str | Path, cfg: TrainConfig) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)


def apply_overrides(cfg: TrainConfig, overrides: list[str]) -> TrainConfig:
    """Apply `a.b.c=value` assignments, returning a new config.

    Values parse as YAML scalars, so `lr0=1e-3`, `mode=roigan`, and
    `stop_at_psnr=null` all do the expected thing. Unknown keys raise.
    """
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        parts = dotted.strip().split(".")
        node = data
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                raise KeyError(f"unknown config section {p!r} in override {item!r}")
            node = node[p]
        if parts[-1] not in node:
            raise KeyError(f"unknown config key {dotted!r}")
        node[parts[-1]] = yaml.safe_load(raw)
    return config_from_dict(data)
