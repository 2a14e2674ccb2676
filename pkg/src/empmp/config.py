"""Run configuration: built-in defaults, then a YAML file, then command-line flags.

A config file is a YAML mapping. Keys may be nested or written flat with
dots, and both forms can be mixed::

    preset: cmu-1s
    model:
      C: 45
      norm_layout: slice
    train.epochs: 20
    train.lr: 3.0e-4
    data.train: scenes/manifest.txt
    scheme: cmu-1s
    out: runs/first

Top-level sections are ``model`` (architecture fields, applied on top of
``preset``), ``train`` (optimisation fields) and ``data`` (``train`` and
``eval`` paths). ``preset``, ``scheme`` and ``out`` are plain top-level keys.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import ConfigError
from .model import ModelConfig, preset as model_preset
from .train import TrainPlan

TOP_KEYS = ("preset", "scheme", "out")
SECTIONS = ("model", "train", "data")
DATA_KEYS = ("train", "eval")
_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainPlan)}

DEFAULTS: dict[str, Any] = {
    "preset": "cmu-1s",
    "scheme": None,
    "out": None,
    "model": {},
    "train": {"epochs": 10, "batch_size": 128, "lr": 3e-4},
    "data": {},
}


def _nest(flat: Mapping[str, Any], source: str) -> dict:
    out: dict[str, Any] = {}
    for key, value in flat.items():
        if not isinstance(key, str):
            raise ConfigError(f"{source}: non-string key {key!r}")
        parts = key.split(".")
        node = out
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{source}: key {key!r} conflicts with a scalar value")
        leaf = parts[-1]
        if isinstance(value, Mapping):
            sub = _nest(value, source)
            node.setdefault(leaf, {})
            if not isinstance(node[leaf], dict):
                raise ConfigError(f"{source}: key {key!r} conflicts with a scalar value")
            merge_into(node[leaf], sub)
        else:
            node[leaf] = value
    return out


def merge_into(base: dict, extra: Mapping) -> dict:
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), dict):
            merge_into(base[key], value)
        else:
            base[key] = copy.deepcopy(value)
    return base


def _check_keys(tree: Mapping, source: str) -> None:
    for key, value in tree.items():
        if key in TOP_KEYS:
            if isinstance(value, Mapping):
                raise ConfigError(f"{source}: {key!r} must be a scalar")
            continue
        if key not in SECTIONS:
            raise ConfigError(f"{source}: unknown key {key!r}")
        if not isinstance(value, Mapping):
            raise ConfigError(f"{source}: section {key!r} must be a mapping")
        allowed = {"model": _MODEL_KEYS, "train": _TRAIN_KEYS, "data": set(DATA_KEYS)}[key]
        unknown = set(value) - allowed
        if unknown:
            raise ConfigError(f"{source}: unknown {key} fields {sorted(unknown)}")


def parse_text(text: str, source: str = "<config>") -> dict:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    if raw is None:
        return {}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{source}: top level must be a mapping")
    tree = _nest(raw, source)
    _check_keys(tree, source)
    return tree


def load_file(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_text(text, str(path))


@dataclass
class RunConfig:
    """Fully resolved settings for one command."""

    preset: str
    model: ModelConfig
    plan: TrainPlan
    data: dict
    scheme: str | None
    out: str | None

    def to_tree(self) -> dict:
        return {
            "preset": self.preset,
            "scheme": self.scheme,
            "out": self.out,
            "model": self.model.to_dict(),
            "train": self.plan.to_dict(),
            "data": dict(self.data),
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_tree(), sort_keys=True)

    def echo(self, out_dir, name: str = "config.yaml") -> Path:
        """Write the resolved configuration next to the run outputs."""
        path = Path(out_dir) / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dump())
        return path


def resolve(file_tree: Mapping | None = None, flag_tree: Mapping | None = None) -> RunConfig:
    """Merge defaults, file values and flag values (later wins) and validate."""
    tree = copy.deepcopy(DEFAULTS)
    for layer, source in ((file_tree, "config file"), (flag_tree, "flags")):
        if layer:
            layer = _nest(layer, source)
            _check_keys(layer, source)
            merge_into(tree, layer)
    model = model_preset(tree["preset"], **tree["model"])
    plan = TrainPlan.from_dict(tree["train"])
    return RunConfig(tree["preset"], model, plan, dict(tree["data"]), tree["scheme"], tree["out"])
