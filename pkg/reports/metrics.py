"""
Accuracy metrics and multi-run aggregation.

Accuracies are fractions in [0, 1]; tables render them as percentages.
Aggregates use the sample (n-1) standard deviation.
"""
import logging
from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.schemas import AggregateEntry, AggregateReport, RunMode, RunReport, TrainConfig
from utils.errors import InvalidArgumentError

logger = logging.getLogger(__name__)


def accuracy(predictions: Sequence[int], truth: Sequence[int]) -> float:
    """Fraction of positions where predictions equal truth."""
    predictions, truth = np.asarray(predictions), np.asarray(truth)
    if predictions.shape != truth.shape:
        raise InvalidArgumentError(f"length mismatch: {predictions.shape} predictions, {truth.shape} labels")
    if predictions.size == 0:
        raise InvalidArgumentError("accuracy of an empty prediction vector is undefined")
    return float(np.mean(predictions == truth))


def confusion_counts(predictions: Sequence[int], truth: Sequence[int], num_classes: int) -> np.ndarray:
    """K x K counts, rows = true class, columns = predicted class."""
    predictions, truth = np.asarray(predictions, dtype=np.int64), np.asarray(truth, dtype=np.int64)
    if predictions.shape != truth.shape:
        raise InvalidArgumentError(f"length mismatch: {predictions.shape} predictions, {truth.shape} labels")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (truth, predictions), 1)
    return counts


def per_class_accuracy(confusion: np.ndarray) -> List[Optional[float]]:
    """Diagonal over row sums; None for classes without instances."""
    totals = confusion.sum(axis=1)
    return [
        float(confusion[k, k] / totals[k]) if totals[k] else None
        for k in range(len(confusion))
    ]


def build_run_report(
    task: str,
    method: RunMode,
    config: TrainConfig,
    predictions: np.ndarray,
    truth: Optional[np.ndarray],
    num_classes: int,
    discriminator_accuracy: Optional[float] = None,
    history_path: Optional[str] = None,
    runtime_seconds: float = 0.0,
) -> RunReport:
    report = RunReport(
        task=task,
        method=method,
        config_digest=config.digest(),
        seed=config.seed,
        discriminator_accuracy=discriminator_accuracy,
        history_path=history_path,
        runtime_seconds=runtime_seconds,
    )
    if truth is not None:
        confusion = confusion_counts(predictions, truth, num_classes)
        report = report.model_copy(update={
            "target_accuracy": accuracy(predictions, truth),
            "confusion": confusion.tolist(),
            "per_class_accuracy": per_class_accuracy(confusion),
        })
    return report


def aggregate(reports: Sequence[RunReport]) -> AggregateReport:
    """Mean and sample std of target accuracy per (task, method), sorted."""
    if not reports:
        raise InvalidArgumentError("cannot aggregate an empty list of reports")

    groups: Dict[Tuple[str, str], List[float]] = defaultdict(list)
    for report in reports:
        if report.target_accuracy is None:
            raise InvalidArgumentError(
                f"report {report.task}/{report.method.value} seed {report.seed} has no target accuracy"
            )
        groups[(report.task, report.method.value)].append(report.target_accuracy)

    entries = []
    for (task, method), values in sorted(groups.items()):
        # Sorted values make the float sums independent of report order.
        values = np.sort(np.asarray(values, dtype=np.float64))
        n = len(values)
        if n == 1:
            logger.warning(f"⚠️ {task}/{method}: single run, std reported as 0")
        entries.append(AggregateEntry(
            task=task,
            method=RunMode(method),
            mean_accuracy=float(np.mean(values)),
            std_accuracy=float(np.std(values, ddof=1)) if n > 1 else 0.0,
            n_runs=n,
            single_run=n == 1,
        ))
    return AggregateReport(entries=entries)
