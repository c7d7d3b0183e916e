"""
Pydantic models shared across the LAD toolkit.

Configuration models validate every hyperparameter invariant at construction;
report models are the persisted (JSON) artifacts of a run.
"""
import hashlib
import json
import math
from enum import Enum
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Bumped whenever the JSON layout of RunReport / AggregateReport changes.
SCHEMA_VERSION = 1

BASELINE_EPOCHS = 100


# =============================================================================
# Enums
# =============================================================================

class Activation(str, Enum):
    """Activation applied after a dense layer's affine map."""
    RELU = "relu"
    SOFTMAX = "softmax"
    IDENTITY = "identity"


class Mode(str, Enum):
    """Network mode; dropout is only active in TRAIN."""
    TRAIN = "train"
    EVAL = "eval"


class RunMode(str, Enum):
    """Training procedure of a run."""
    LAD = "lad"
    BASELINE = "baseline"


# =============================================================================
# Configuration Models
# =============================================================================

class TrainConfig(BaseModel):
    """Hyperparameters of one training run."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    learning_rate: float = Field(0.001, gt=0.0, description="SGD learning rate")
    momentum: float = Field(0.9, ge=0.0, lt=1.0, description="Nesterov momentum")
    batch_size: int = Field(32, ge=1)
    n_epochs: int = Field(1000, ge=1, description="Passes over the source domain")
    hidden_width: int = Field(1024, ge=1, description="Width of both hidden layers")
    dropout_rate: float = Field(0.5, ge=0.0, lt=1.0, description="Classifier hidden dropout")
    use_class_weights: bool = Field(True, description="Class-frequency weighting of both losses")
    reverse_gradient: bool = Field(True, description="GRL active; False detaches the classifier")
    seed: int = Field(0, ge=0)
    record_every: int = Field(1, ge=1, description="Epochs between history snapshots")
    checkpoint_every: int = Field(0, ge=0, description="Epochs between checkpoints (0 = never)")
    dtype: Literal["float64", "float32"] = "float64"

    @classmethod
    def baseline(cls, **overrides) -> "TrainConfig":
        """Defaults for the no-discriminator baseline (100 epochs)."""
        overrides.setdefault("n_epochs", BASELINE_EPOCHS)
        return cls(**overrides)

    def digest(self) -> str:
        """Stable hash of every field except the seed."""
        payload = json.dumps(self.model_dump(exclude={"seed"}), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


class SyntheticSpec(BaseModel):
    """
    Gaussian class clusters with a rotation + translation covariate shift and
    a label shift induced by target class proportions.

    When class_means is omitted the means sit on a circle of radius
    mean_radius in the first two dimensions, evenly spaced in angle.
    """
    model_config = ConfigDict(extra="forbid")

    num_classes: int = Field(..., ge=1)
    dim: int = Field(..., ge=1)
    n_source: int = Field(..., ge=1)
    n_target: int = Field(..., ge=1)
    class_means: Optional[List[List[float]]] = None
    mean_radius: float = Field(4.0, gt=0.0)
    class_spread: float = Field(1.0, gt=0.0)
    shift_rotation_degrees: float = 0.0
    shift_translation: Optional[List[float]] = None
    source_class_proportions: Optional[List[float]] = None
    target_class_proportions: Optional[List[float]] = None
    seed: int = Field(0, ge=0)

    @model_validator(mode="after")
    def _check_consistency(self) -> "SyntheticSpec":
        k = self.num_classes
        if self.n_source < k:
            raise ValueError(f"n_source ({self.n_source}) must be >= num_classes ({k})")
        if self.n_target < k:
            raise ValueError(f"n_target ({self.n_target}) must be >= num_classes ({k})")
        for name in ("source_class_proportions", "target_class_proportions"):
            props = getattr(self, name)
            if props is None:
                continue
            if len(props) != k:
                raise ValueError(f"{name} needs {k} entries, got {len(props)}")
            if any(p < 0 for p in props):
                raise ValueError(f"{name} must be non-negative")
            if abs(math.fsum(props) - 1.0) > 1e-9:
                raise ValueError(f"{name} must sum to 1 (got {math.fsum(props)!r})")
        if self.class_means is not None:
            if len(self.class_means) != k or any(len(m) != self.dim for m in self.class_means):
                raise ValueError(f"class_means must be {k} points of dimension {self.dim}")
        elif self.dim < 2 and k > 2:
            raise ValueError("dim must be >= 2 to place more than two default class means")
        if self.shift_translation is not None and len(self.shift_translation) != self.dim:
            raise ValueError(f"shift_translation must have {self.dim} entries")
        if self.shift_rotation_degrees != 0.0 and self.dim < 2:
            raise ValueError("shift_rotation_degrees needs dim >= 2")
        return self


class ExperimentConfig(BaseModel):
    """A reproducible multi-seed experiment as launched from the CLI."""
    model_config = ConfigDict(extra="forbid")

    mode: RunMode = RunMode.LAD
    source: Path
    target: Path
    target_labels: Optional[Path] = None
    train: TrainConfig = Field(default_factory=TrainConfig)
    n_runs: int = Field(10, ge=1)
    jobs: int = Field(1, ge=1)
    out: Path = Path("runs")
    task: Optional[str] = None
    resume: bool = Field(False, description="Continue each run from the checkpoint in its run directory")

    @field_validator("source", "target", "target_labels")
    @classmethod
    def _must_exist(cls, value: Optional[Path]) -> Optional[Path]:
        if value is not None and not Path(value).is_file():
            raise ValueError(f"file not found: {value}")
        return value

    @model_validator(mode="after")
    def _default_task(self) -> "ExperimentConfig":
        if self.task is None:
            self.task = f"{self.source.stem}->{self.target.stem}"
        return self

    def seeds(self) -> List[int]:
        """base_seed + run_index for every run."""
        return [self.train.seed + i for i in range(self.n_runs)]


# =============================================================================
# History & Report Models
# =============================================================================

class HistorySnapshot(BaseModel):
    """Metrics recorded at the end of one epoch."""
    epoch: int = Field(..., ge=1)
    source_class_loss: float
    target_class_loss: Optional[float] = Field(None, description="Unweighted; needs target labels")
    target_accuracy: Optional[float] = Field(None, ge=0.0, le=1.0)
    discriminator_accuracy: Optional[float] = Field(None, ge=0.0, le=1.0)
    wallclock: float = Field(0.0, ge=0.0, description="Seconds since the run started")


class TrainHistory(BaseModel):
    """Per-epoch learning curves of one run."""
    snapshots: List[HistorySnapshot] = Field(default_factory=list)

    @field_validator("snapshots")
    @classmethod
    def _monotone(cls, snapshots: List[HistorySnapshot]) -> List[HistorySnapshot]:
        epochs = [s.epoch for s in snapshots]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("snapshot epochs must be strictly increasing")
        return snapshots

    def record(self, snapshot: HistorySnapshot) -> None:
        if self.snapshots and snapshot.epoch <= self.snapshots[-1].epoch:
            raise ValueError(
                f"epoch {snapshot.epoch} recorded after epoch {self.snapshots[-1].epoch}"
            )
        self.snapshots.append(snapshot)

    @property
    def final(self) -> Optional[HistorySnapshot]:
        return self.snapshots[-1] if self.snapshots else None

    def __len__(self) -> int:
        return len(self.snapshots)


class RunReport(BaseModel):
    """Outcome of one seed of one task."""
    schema_version: int = SCHEMA_VERSION
    task: str
    method: RunMode
    config_digest: str
    seed: int
    target_accuracy: Optional[float] = Field(None, ge=0.0, le=1.0)
    per_class_accuracy: List[Optional[float]] = Field(default_factory=list)
    confusion: List[List[int]] = Field(default_factory=list, description="rows = truth, cols = predicted")
    discriminator_accuracy: Optional[float] = Field(None, ge=0.0, le=1.0)
    history_path: Optional[str] = None
    runtime_seconds: float = Field(0.0, ge=0.0)

    @model_validator(mode="after")
    def _per_class_matches_confusion(self) -> "RunReport":
        if not self.confusion:
            return self
        if len(self.per_class_accuracy) != len(self.confusion):
            raise ValueError("per_class_accuracy and confusion disagree on the class count")
        for k, (row, acc) in enumerate(zip(self.confusion, self.per_class_accuracy)):
            total = sum(row)
            if total == 0:
                if acc is not None:
                    raise ValueError(f"class {k} has no instances but an accuracy")
            elif acc is None or abs(acc - row[k] / total) > 1e-12:
                raise ValueError(f"per-class accuracy of class {k} disagrees with confusion counts")
        return self


class AggregateEntry(BaseModel):
    """Mean and sample standard deviation over the runs of one (task, method)."""
    task: str
    method: RunMode
    mean_accuracy: float
    std_accuracy: float = Field(..., description="n-1 denominator; 0 when n_runs == 1")
    n_runs: int = Field(..., ge=1)
    single_run: bool = False


class AggregateReport(BaseModel):
    """All aggregated cells of an experiment, ordered by (task, method)."""
    schema_version: int = SCHEMA_VERSION
    entries: List[AggregateEntry] = Field(default_factory=list)
