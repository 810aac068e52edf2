"""Flat key-value run configuration for the two training phases.

File format: one ``key = value`` pair per line, ``#`` comments, UTF-8.
Hyper-parameter keys use the canonical spelling (``optimizer``,
``learning_rate``, ``weight_decay``, ``batch_size``, ``warmup_steps``,
``epochs``, ``number_of_multicrop``, ``mask_ratio``, ``decoder_layers``).

Precedence: command-line overrides beat file values. Environment variables
of the form ``BILIP_<KEY>`` override path-valued keys only, never
hyper-parameters.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


def _parse_bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


@dataclass
class RunConfig:
    """Everything one training run needs; both phases share the schema."""

    phase: str = "contrastive"
    seed: int = 0

    # paths
    manifest: str = ""
    images_dir: str = ""
    vocab: str = ""
    init_checkpoint: str = ""
    checkpoint_out: str = ""
    metrics_log: str = ""
    output_dir: str = ""

    # model dimensions
    text_layers: int = 2
    text_width: int = 64
    text_heads: int = 4
    max_len: int = 16
    embed_dim: int = 64
    vision_layers: int = 2
    vision_width: int = 64
    vision_heads: int = 4
    patch_size: int = 8
    image_size: int = 32
    local_size: int = 16

    # optimization (key spelling mirrors the hyper-parameter table)
    optimizer: str = "adamw"
    learning_rate: float = 1.2e-3
    weight_decay: float = 0.2
    batch_size: int = 64
    warmup_steps: int = 100
    epochs: int = 32
    number_of_multicrop: int = 1
    mask_ratio: float = 0.75
    decoder_layers: int = 4
    steps: int = 0  # explicit step budget; 0 derives it from epochs

    def echo(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


PATH_KEYS = ("manifest", "images_dir", "vocab", "init_checkpoint",
             "checkpoint_out", "metrics_log", "output_dir")

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}

ALLOWED_KEYS = frozenset(_FIELD_TYPES)


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    try:
        if kind in ("int",):
            return int(raw)
        if kind in ("float",):
            return float(raw)
        if kind in ("bool",):
            return _parse_bool(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r} ({exc})") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in ALLOWED_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_run_config(path=None, overrides: dict | None = None,
                    phase: str | None = None, environ=None) -> RunConfig:
    """Merge file values, environment path overrides, and explicit overrides
    (in increasing precedence) into a validated :class:`RunConfig`."""
    environ = os.environ if environ is None else environ
    values: dict = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text("utf-8"), source=str(path)))
    for key in PATH_KEYS:
        env_value = environ.get(f"BILIP_{key.upper()}")
        if env_value:
            values[key] = env_value
    for key, raw in (overrides or {}).items():
        if key not in ALLOWED_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw) if isinstance(raw, str) else raw
    if phase is not None:
        values["phase"] = phase
    cfg = RunConfig(**values)
    if cfg.phase not in ("mae", "contrastive"):
        raise ConfigError(f"unknown phase {cfg.phase!r}")
    return cfg


def require_inputs(cfg: RunConfig, *keys: str) -> None:
    """Referenced input paths must exist at load time."""
    for key in keys:
        value = getattr(cfg, key)
        if not value:
            raise ConfigError(f"required path {key!r} is not set")
        if not Path(value).exists():
            raise ConfigError(f"{key} path does not exist: {value}")
