"""
Multi-seed experiment driver.

Each run (seed = base_seed + run_index) owns its model, random streams and
output directory <out>/<mode>_seed<seed>/ containing:

    config.json       effective experiment config + config digest
    history.csv       learning curves
    predictions.csv   final target predictions
    report.json       RunReport
    checkpoint.npz    only when checkpoint_every > 0

Runs share no mutable state, so they may execute in parallel processes.
"""
import json
import logging
import time
from multiprocessing import Pool
from pathlib import Path
from typing import List, Optional

from data.datasets import FeatureDataset, attach_labels, load_features, load_labels
from memory.checkpoint import CHECKPOINT_NAME, Checkpoint, load_checkpoint
from models.schemas import AggregateReport, ExperimentConfig, RunMode, RunReport, TrainConfig
from orchestrator.trainer import LadTrainer
from reports.emit import emit, emit_predictions
from reports.metrics import aggregate, build_run_report
from utils.errors import CheckpointError

logger = logging.getLogger(__name__)


def load_domains(experiment: ExperimentConfig) -> tuple[FeatureDataset, FeatureDataset]:
    source = load_features(experiment.source)
    target = load_features(experiment.target)
    if experiment.target_labels is not None:
        target = attach_labels(
            target,
            load_labels(experiment.target_labels),
            num_classes=target.num_classes if target.num_classes is not None else source.num_classes,
        )
    elif not target.has_labels:
        logger.warning("⚠️ No target labels: accuracy diagnostics and aggregates are unavailable")
    return source, target


def run_dir_for(experiment: ExperimentConfig, seed: int) -> Path:
    return experiment.out / f"{experiment.mode.value}_seed{seed}"


def _resume_point(run_dir: Path, config: TrainConfig) -> Optional[Checkpoint]:
    path = run_dir / CHECKPOINT_NAME
    if not path.is_file():
        logger.warning(f"⚠️ No checkpoint in {run_dir}; seed {config.seed} starts from scratch")
        return None
    checkpoint = load_checkpoint(path)
    stored = TrainConfig.model_validate(checkpoint.meta["config"])
    if stored.seed != config.seed:
        raise CheckpointError(f"{path}: written for seed {stored.seed}, resuming seed {config.seed}")
    if stored.digest() != config.digest():
        logger.warning(f"⚠️ {path}: resuming under a different config (digest {stored.digest()} -> {config.digest()})")
    return checkpoint


def run_single(experiment: ExperimentConfig, seed: int) -> RunReport:
    """Train one seed and write its artifacts."""
    source, target = load_domains(experiment)
    config = experiment.train.model_copy(update={"seed": seed})
    run_dir = run_dir_for(experiment, seed)
    run_dir.mkdir(parents=True, exist_ok=True)

    effective = experiment.model_dump(mode="json")
    effective["train"] = config.model_dump(mode="json")
    effective["config_digest"] = config.digest()
    (run_dir / "config.json").write_text(json.dumps(effective, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    trainer = LadTrainer(config, checkpoint_dir=run_dir)
    resume_from = _resume_point(run_dir, config) if experiment.resume else None
    started = time.perf_counter()
    if experiment.mode is RunMode.LAD:
        result = trainer.lad_train(source, target, resume_from=resume_from)
    else:
        result = trainer.baseline_train(source, target, resume_from=resume_from)
    runtime = time.perf_counter() - started

    emit(result.history, run_dir / "history.csv")
    emit_predictions(run_dir / "predictions.csv", target.row_ids(), result.predictions, target.labels)
    final = result.history.final
    report = build_run_report(
        task=experiment.task,
        method=experiment.mode,
        config=config,
        predictions=result.predictions,
        truth=target.labels,
        num_classes=result.model.num_classes,
        discriminator_accuracy=final.discriminator_accuracy if final else None,
        history_path="history.csv",
        runtime_seconds=runtime,
    )
    emit(report, run_dir / "report.json")
    logger.info(
        f"📤 {experiment.task} {experiment.mode.value} seed {seed}: "
        + (f"target acc {report.target_accuracy:.4f}" if report.target_accuracy is not None else "done")
        + f" ({runtime:.1f}s)"
    )
    return report


def _run_single_args(args: tuple) -> RunReport:
    return run_single(*args)


def run_experiment(experiment: ExperimentConfig) -> AggregateReport:
    """Run every seed (in parallel up to experiment.jobs) and write aggregate.json."""
    seeds = experiment.seeds()
    experiment.out.mkdir(parents=True, exist_ok=True)
    logger.info(
        f"🚀 Experiment {experiment.task}: mode={experiment.mode.value}, runs={len(seeds)}, "
        f"jobs={experiment.jobs}, digest={experiment.train.digest()}"
    )

    if experiment.jobs > 1 and len(seeds) > 1:
        with Pool(processes=min(experiment.jobs, len(seeds))) as pool:
            reports: List[RunReport] = pool.map(_run_single_args, [(experiment, s) for s in seeds])
    else:
        reports = [run_single(experiment, s) for s in seeds]

    scored = [r for r in reports if r.target_accuracy is not None]
    summary = aggregate(scored) if scored else AggregateReport()
    emit(summary, experiment.out / "aggregate.json")
    for entry in summary.entries:
        logger.info(
            f"✅ {entry.task}/{entry.method.value}: {100 * entry.mean_accuracy:.1f} ± "
            f"{100 * entry.std_accuracy:.1f} over {entry.n_runs} runs"
        )
    return summary
