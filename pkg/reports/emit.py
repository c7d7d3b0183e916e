"""
Writing and reading run artifacts.

- history.csv:     epoch,source_loss,target_loss,target_acc,disc_acc
- predictions.csv: id,predicted_label[,label]
- report.json / aggregate.json: pydantic models with a schema_version field
"""
import json
import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from models.schemas import SCHEMA_VERSION, AggregateReport, RunReport, TrainHistory
from utils.errors import DataError, InvalidArgumentError, SchemaVersionError

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["epoch", "source_loss", "target_loss", "target_acc", "disc_acc"]
FLOAT_FORMAT = "%.17g"

PathLike = Union[str, Path]


def history_frame(history: TrainHistory) -> pd.DataFrame:
    rows = [
        (s.epoch, s.source_class_loss, s.target_class_loss, s.target_accuracy, s.discriminator_accuracy)
        for s in history.snapshots
    ]
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    try:
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


def emit(obj: Union[TrainHistory, BaseModel], path: PathLike, format: Optional[str] = None) -> Path:
    """
    Write a history as CSV or a report as JSON. format defaults to the
    file suffix ("csv" or "json").
    """
    path = Path(path)
    format = (format or path.suffix.lstrip(".")).lower()
    if format == "csv":
        if not isinstance(obj, TrainHistory):
            raise InvalidArgumentError(f"CSV output is only defined for histories, got {type(obj).__name__}")
        _write_csv(history_frame(obj), path)
    elif format == "json":
        if not isinstance(obj, BaseModel):
            raise InvalidArgumentError(f"JSON output needs a pydantic model, got {type(obj).__name__}")
        try:
            path.write_text(obj.model_dump_json(indent=2) + "\n", encoding="utf-8")
        except OSError as e:
            raise DataError(f"cannot write {path}: {e}") from e
    else:
        raise InvalidArgumentError(f"unknown output format {format!r} (expected csv or json)")
    logger.debug(f"Wrote {path}")
    return path


def emit_predictions(
    path: PathLike,
    ids: Sequence[str],
    predictions: np.ndarray,
    truth: Optional[np.ndarray] = None,
) -> Path:
    path = Path(path)
    frame = pd.DataFrame({"id": list(ids), "predicted_label": np.asarray(predictions, dtype=np.int64)})
    if truth is not None:
        frame["label"] = np.asarray(truth, dtype=np.int64)
    _write_csv(frame, path)
    return path


# =============================================================================
# Loading
# =============================================================================

def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: corrupt JSON ({e})") from e


def load_run_report(path: PathLike) -> RunReport:
    path = Path(path)
    payload = _read_json(path)
    version = payload.get("schema_version") if isinstance(payload, dict) else None
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"{path}: schema_version {version} (expected {SCHEMA_VERSION})")
    try:
        return RunReport.model_validate(payload)
    except ValidationError as e:
        raise DataError(f"{path}: invalid report ({e.error_count()} errors)") from e


def check_schema_versions(paths: Iterable[PathLike]) -> None:
    """Raise SchemaVersionError when the reports do not share one version."""
    versions = {}
    for path in paths:
        payload = _read_json(Path(path))
        versions.setdefault(payload.get("schema_version") if isinstance(payload, dict) else None, []).append(str(path))
    if len(versions) > 1:
        listing = ", ".join(f"v{v}: {len(p)} file(s)" for v, p in versions.items())
        raise SchemaVersionError(f"mixed schema versions across reports ({listing})")


# =============================================================================
# Tables
# =============================================================================

def render_table(report: AggregateReport) -> str:
    """Method rows x task columns of 'mean±std' percentages, plus an avg column."""
    if not report.entries:
        return "(no aggregated results)"
    frame = pd.DataFrame([
        {
            "method": e.method.value,
            "task": e.task,
            "mean": 100.0 * e.mean_accuracy,
            "cell": f"{100.0 * e.mean_accuracy:.1f}±{100.0 * e.std_accuracy:.1f}",
        }
        for e in report.entries
    ])
    table = frame.pivot(index="method", columns="task", values="cell").fillna("-")
    table["avg"] = frame.groupby("method")["mean"].mean().map(lambda v: f"{v:.1f}")
    table.columns.name = None
    table.index.name = None
    return table.to_string()


def report_paths(run_dirs: Sequence[PathLike]) -> List[Path]:
    """report.json files under each directory (or the paths themselves)."""
    paths: List[Path] = []
    for run_dir in map(Path, run_dirs):
        if run_dir.is_file():
            paths.append(run_dir)
            continue
        found = sorted(run_dir.rglob("report.json"))
        if not found:
            raise DataError(f"no report.json found under {run_dir}")
        paths.extend(found)
    return paths
