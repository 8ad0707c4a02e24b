"""One JSON config document for every subcommand, with dotted overrides.

Layout: top-level sections "synth", "train", "eval", "deviation",
"paths", plus an optional top-level "seed". Unknown keys are rejected at
the top level and inside every section (sections map onto dataclass
constructors, so their field sets are the source of truth).

A top-level seed, whether from the document or the --seed flag, is the
master seed: it is pushed into synth.seed and train.seed so one value
controls all randomness. Scalar overrides use dotted paths, e.g.
train.weights.phi=0 or synth.num_videos=50; values parse as JSON where
possible and fall back to strings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError, FormatError
from .losses import DeviationConfig
from .metrics import EvalConfig
from .synthgen import SynthConfig
from .train import TrainConfig

_SECTIONS = ("seed", "synth", "train", "eval", "deviation", "paths")
_PATH_KEYS = ("out_dir", "manifest", "checkpoint", "predictions", "out")


@dataclass(frozen=True)
class RunConfig:
    seed: int | None
    synth: SynthConfig
    train: TrainConfig
    eval: EvalConfig
    deviation: DeviationConfig
    paths: dict[str, str]


def load_config_tree(path: str | Path | None) -> dict:
    """Raw config document; an absent path means an empty document."""
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            tree = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(tree, dict):
        raise ConfigError(f"{path}: config root must be a JSON object")
    return tree


def parse_override(item: str) -> tuple[list[str], object]:
    """Split a KEY=VALUE override into path components and a parsed value."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like dotted.path=value")
    key, _, raw = item.partition("=")
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {item!r} has an empty path")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return parts, value


def apply_overrides(tree: dict, items: list[str]) -> dict:
    for item in items:
        parts, value = parse_override(item)
        node = tree
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(
                    f"override {item!r}: {part!r} is not a section"
                )
            node = child
        node[parts[-1]] = value
    return tree


def _build_section(name: str, factory, raw: dict):
    try:
        return factory(**raw)
    except TypeError as exc:
        # Dataclass constructors reject unknown fields with a TypeError.
        raise ConfigError(f"config section {name!r}: {exc}") from exc


def build_run_config(tree: dict, seed_flag: int | None = None) -> RunConfig:
    unknown = set(tree) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    paths = dict(tree.get("paths", {}))
    bad_paths = set(paths) - set(_PATH_KEYS)
    if bad_paths:
        raise ConfigError(f"unknown path keys: {sorted(bad_paths)}")

    seed = seed_flag if seed_flag is not None else tree.get("seed")
    if seed is not None and not isinstance(seed, int):
        raise ConfigError(f"seed must be an integer, got {seed!r}")

    synth_raw = dict(tree.get("synth", {}))
    train_raw = dict(tree.get("train", {}))
    deviation_raw = dict(tree.get("deviation", {}))
    if "objectives" in deviation_raw:
        deviation_raw["objectives"] = tuple(deviation_raw["objectives"])
    deviation = _build_section("deviation", DeviationConfig, deviation_raw)
    # The standalone deviation section doubles as the training default.
    if deviation_raw and "deviation" not in train_raw:
        train_raw["deviation"] = dict(deviation_raw)
    if seed is not None:
        synth_raw["seed"] = seed
        train_raw["seed"] = seed

    synth = _build_section("synth", SynthConfig, synth_raw)
    try:
        train = TrainConfig.from_dict(train_raw)
    except TypeError as exc:
        raise ConfigError(f"config section 'train': {exc}") from exc
    eval_cfg = _build_section("eval", EvalConfig, dict(tree.get("eval", {})))
    return RunConfig(
        seed=seed,
        synth=synth,
        train=train,
        eval=eval_cfg,
        deviation=deviation,
        paths=paths,
    )
