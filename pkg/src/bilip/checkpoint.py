"""Checkpoint container: named weight arrays plus a JSON header with the
configuration echo, phase tag, step counter, temperature, and format version.

Weights are stored as float64 npz entries, so a save/load round trip is
bit-exact. Loading validates the phase and, when a configuration is supplied,
the configuration echo.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

FORMAT_VERSION = 1

PHASE_MAE = "mae"
PHASE_MAE_EXPORT = "mae-export"
PHASE_CONTRASTIVE = "contrastive"
PHASES = (PHASE_MAE, PHASE_MAE_EXPORT, PHASE_CONTRASTIVE)

TAU_FLOOR = 0.01


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    phase: str
    step: int
    weights: dict[str, np.ndarray]
    config: dict
    temperature: float | None = None
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        if self.phase not in PHASES:
            raise CheckpointError(f"unknown phase {self.phase!r}")
        if self.phase == PHASE_CONTRASTIVE:
            if self.temperature is None:
                raise CheckpointError("contrastive checkpoints carry a temperature")
            if self.temperature < TAU_FLOOR:
                raise CheckpointError(
                    f"temperature {self.temperature} below the {TAU_FLOOR} floor"
                )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    header = {
        "format_version": ckpt.format_version,
        "phase": ckpt.phase,
        "step": ckpt.step,
        "config": ckpt.config,
        "temperature": ckpt.temperature,
        "weight_names": sorted(ckpt.weights),
    }
    arrays = {f"w::{name}": np.asarray(arr, dtype=np.float64)
              for name, arr in ckpt.weights.items()}
    np.savez(path, __header__=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path, expected_phase: str | None = None,
                    expected_config: dict | None = None) -> Checkpoint:
    with np.load(path, allow_pickle=False) as data:
        if "__header__" not in data:
            raise CheckpointError(f"{path} is not a checkpoint container")
        header = json.loads(str(data["__header__"][()]))
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint format {header.get('format_version')}"
            )
        weights = {name[3:]: data[name] for name in data.files if name.startswith("w::")}
    if sorted(weights) != header["weight_names"]:
        raise CheckpointError("weight inventory does not match the header")
    ckpt = Checkpoint(
        phase=header["phase"],
        step=int(header["step"]),
        weights=weights,
        config=header["config"],
        temperature=header["temperature"],
    )
    if expected_phase is not None and ckpt.phase != expected_phase:
        raise CheckpointError(
            f"phase mismatch: checkpoint is {ckpt.phase!r}, expected {expected_phase!r}"
        )
    if expected_config is not None:
        mismatched = {
            key: (expected_config[key], ckpt.config.get(key))
            for key in expected_config
            if ckpt.config.get(key) != expected_config[key]
        }
        if mismatched:
            raise CheckpointError(f"config mismatch: {mismatched}")
    return ckpt
