"""
Checkpoint persistence for resumable training runs.

A checkpoint is a single .npz archive:
- one array per parameter and per optimizer velocity,
- the current target weights and predictions,
- a JSON "meta" entry with the format version, layer layout, generator
  states of every random stream, the epoch and step counters, elapsed time,
  the training config and the history so far.

Restoring all of it and continuing from epoch + 1 reproduces an
uninterrupted run bit-exactly.
"""
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np

from models.schemas import TrainConfig, TrainHistory
from orchestrator.model import LadModel, RunRngs
from utils.errors import CheckpointError

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
CHECKPOINT_NAME = "checkpoint.npz"


@dataclass
class TrainState:
    """Loop state beyond the model itself."""
    epoch: int
    total_steps: int
    elapsed: float
    target_weights: np.ndarray
    predictions: Optional[np.ndarray]
    history: TrainHistory


@dataclass
class Checkpoint:
    """A loaded archive, not yet applied to a model."""
    meta: dict
    arrays: Dict[str, np.ndarray]

    @property
    def epoch(self) -> int:
        return self.meta["epoch"]

    @property
    def config(self) -> TrainConfig:
        return TrainConfig(**self.meta["config"])


def _groups(model: LadModel) -> Dict[str, List[np.ndarray]]:
    groups = {
        "classifier": model.classifier.parameters(),
        "classifier_opt": model.classifier_opt.velocity,
    }
    if model.adversarial:
        groups["discriminator"] = model.discriminator.parameters()
        groups["domain_opt"] = model.domain_opt.velocity
    return groups


def _layout(model: LadModel) -> dict:
    nets = {"classifier": model.classifier}
    if model.adversarial:
        nets["discriminator"] = model.discriminator
    return {
        name: [[l.fan_in, l.fan_out, l.activation.value, l.dropout_rate] for l in net.layers]
        for name, net in nets.items()
    }


def save_checkpoint(
    path: Union[str, Path],
    model: LadModel,
    rngs: RunRngs,
    state: TrainState,
    config: TrainConfig,
) -> Path:
    """Atomically write a checkpoint; returns the path written."""
    path = Path(path)
    arrays: Dict[str, np.ndarray] = {}
    for group, tensors in _groups(model).items():
        for i, tensor in enumerate(tensors):
            arrays[f"{group}__{i}"] = tensor
    arrays["target_weights"] = state.target_weights
    if state.predictions is not None:
        arrays["predictions"] = state.predictions

    meta = {
        "version": CHECKPOINT_VERSION,
        "epoch": state.epoch,
        "total_steps": state.total_steps,
        "elapsed": state.elapsed,
        "reverse_gradient": model.reverse_gradient,
        "layout": _layout(model),
        "rng": rngs.state(),
        "config": config.model_dump(),
        "history": state.history.model_dump(),
    }
    arrays["meta"] = np.array(json.dumps(meta))

    tmp = path.with_name(path.name + ".tmp")
    try:
        with tmp.open("wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.info(f"💾 Checkpoint written: {path} (epoch {state.epoch})")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            arrays = {key: archive[key] for key in archive.files}
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if "meta" not in arrays:
        raise CheckpointError(f"{path}: missing meta entry")
    meta = json.loads(str(arrays.pop("meta")))
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {meta.get('version')} != {CHECKPOINT_VERSION}"
        )
    return Checkpoint(meta=meta, arrays=arrays)


def restore_checkpoint(checkpoint: Checkpoint, model: LadModel, rngs: RunRngs) -> TrainState:
    """Copy parameters, velocities and generator states into live objects."""
    if checkpoint.meta["layout"] != _layout(model):
        raise CheckpointError("checkpoint layout does not match the model being resumed")
    if checkpoint.meta["reverse_gradient"] != model.reverse_gradient:
        raise CheckpointError("checkpoint was written with a different gradient-reversal setting")
    for group, tensors in _groups(model).items():
        for i, tensor in enumerate(tensors):
            key = f"{group}__{i}"
            if key not in checkpoint.arrays:
                raise CheckpointError(f"checkpoint is missing {key}")
            stored = checkpoint.arrays[key]
            if stored.shape != tensor.shape or stored.dtype != tensor.dtype:
                raise CheckpointError(f"{key}: stored {stored.dtype}{stored.shape}, model {tensor.dtype}{tensor.shape}")
            tensor[...] = stored
    rngs.restore(checkpoint.meta["rng"])
    return TrainState(
        epoch=checkpoint.meta["epoch"],
        total_steps=checkpoint.meta["total_steps"],
        elapsed=checkpoint.meta["elapsed"],
        target_weights=checkpoint.arrays["target_weights"],
        predictions=checkpoint.arrays.get("predictions"),
        history=TrainHistory(**checkpoint.meta["history"]),
    )
