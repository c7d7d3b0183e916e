"""
LAD command-line interface.

Label alignment for unsupervised domain adaptation on pre-extracted deep
features:
- gen-synth: write a synthetic source/target pair with covariate + label shift
- train:     run LAD or the no-discriminator baseline over several seeds
- report:    aggregate run directories into a method x task accuracy table

Exit codes: 0 success, 1 other error, 2 configuration error, 3 data error,
4 internal invariant violation. LAD_LOG sets the log level.
"""
import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from config.settings import get_settings
from data.datasets import save_features, save_labels
from data.synthetic import synth_gaussian_shift
from models.schemas import BASELINE_EPOCHS, ExperimentConfig, RunMode, SyntheticSpec
from orchestrator.experiment import run_experiment
from reports.emit import check_schema_versions, load_run_report, render_table, report_paths
from reports.metrics import aggregate
from utils.errors import ConfigError, DataError, InvariantViolationError, LadError, SchemaVersionError

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INVARIANT = 4

# Flag name -> TrainConfig field.
TRAIN_FLAGS = {
    "epochs": "n_epochs",
    "lr": "learning_rate",
    "momentum": "momentum",
    "batch_size": "batch_size",
    "hidden": "hidden_width",
    "dropout": "dropout_rate",
    "seed": "seed",
    "record_every": "record_every",
    "checkpoint_every": "checkpoint_every",
}

# Flag name -> ExperimentConfig field.
EXPERIMENT_FLAGS = {
    "mode": "mode",
    "source": "source",
    "target": "target",
    "target_labels": "target_labels",
    "runs": "n_runs",
    "jobs": "jobs",
    "out": "out",
    "task": "task",
}


# =============================================================================
# HELPERS
# =============================================================================

def _describe(error: ValidationError) -> str:
    """One line per failing field, e.g. 'n_source: Input should be >= 1'."""
    return "; ".join(
        f"{'.'.join(str(part) for part in err['loc']) or 'config'}: {err['msg']}"
        for err in error.errors()
    )


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def read_key_values(path: Path) -> Dict[str, Any]:
    """A JSON object, or key=value lines (values parsed as JSON when possible)."""
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read {path}: {e}") from e
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from e
        if not isinstance(payload, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        return payload

    values: Dict[str, Any] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, raw = line.partition("=")
        if not sep:
            raise ConfigError(f"{path}: line {number}: expected key=value, got {line!r}")
        values[key.strip()] = _parse_value(raw.strip())
    return values


def build_experiment(args: argparse.Namespace) -> ExperimentConfig:
    """Merge the optional config file with flags (flags win) and validate."""
    merged: Dict[str, Any] = read_key_values(Path(args.config)) if args.config else {}
    train = dict(merged.pop("train", {}) or {})

    for flag, field in EXPERIMENT_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            merged[field] = value
    for flag, field in TRAIN_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            train[field] = value
    if args.no_class_weights:
        train["use_class_weights"] = False
    if args.resume:
        merged["resume"] = True

    if str(merged.get("mode", RunMode.LAD.value)) == RunMode.BASELINE.value:
        train.setdefault("n_epochs", BASELINE_EPOCHS)
    merged.setdefault("jobs", get_settings().default_jobs)
    merged.setdefault("out", get_settings().output_root)
    merged["train"] = train

    try:
        return ExperimentConfig(**merged)
    except ValidationError as e:
        raise ConfigError(_describe(e)) from e


# =============================================================================
# COMMANDS
# =============================================================================

def cmd_gen_synth(spec_file: Path, out_dir: Path) -> List[Path]:
    """Write source.csv, target.csv (unlabeled) and target_labels.csv."""
    try:
        spec = SyntheticSpec(**read_key_values(spec_file))
    except ValidationError as e:
        raise ConfigError(_describe(e)) from e

    source, target = synth_gaussian_shift(spec)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create {out_dir}: {e}") from e
    paths = [out_dir / "source.csv", out_dir / "target.csv", out_dir / "target_labels.csv"]
    save_features(source, paths[0])
    save_features(target.without_labels(), paths[1])
    save_labels(target, paths[2])
    logger.info(f"📤 Wrote {', '.join(str(p) for p in paths)}")
    return paths


def cmd_train(args: argparse.Namespace) -> int:
    experiment = build_experiment(args)
    run_experiment(experiment)
    return EXIT_OK


def cmd_report(run_dirs: List[Path], out: Optional[Path] = None) -> str:
    """Aggregate every report.json under run_dirs into a method x task table."""
    paths, problems = [], []
    for run_dir in run_dirs:
        try:
            paths.extend(report_paths([run_dir]))
        except DataError as e:
            problems.append(str(e))
    reports = []
    for path in paths:
        try:
            reports.append(load_run_report(path))
        except DataError as e:
            problems.append(str(e))
    if problems:
        try:
            check_schema_versions(p for p in paths if p.is_file())
        except SchemaVersionError:
            raise
        except DataError:
            pass
        raise DataError("unusable reports:\n  " + "\n  ".join(problems))

    table = render_table(aggregate(reports))
    if out is not None:
        try:
            out.write_text(table + "\n", encoding="utf-8")
        except OSError as e:
            raise DataError(f"cannot write {out}: {e}") from e
    return table


# =============================================================================
# PARSER
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lad", description="Label alignment domain adaptation")
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen-synth", help="generate a synthetic shifted source/target pair")
    gen.add_argument("spec", type=Path, help="SyntheticSpec as JSON or key=value lines")
    gen.add_argument("--out", type=Path, required=True, help="output directory")

    train = commands.add_parser("train", help="train LAD or the baseline over several seeds")
    train.add_argument("--config", type=Path, help="experiment config (JSON or key=value)")
    train.add_argument("--mode", choices=[m.value for m in RunMode])
    train.add_argument("--source", type=Path)
    train.add_argument("--target", type=Path)
    train.add_argument("--target-labels", type=Path)
    train.add_argument("--task")
    train.add_argument("--epochs", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--momentum", type=float)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--hidden", type=int)
    train.add_argument("--dropout", type=float)
    train.add_argument("--no-class-weights", action="store_true")
    train.add_argument("--record-every", type=int)
    train.add_argument("--checkpoint-every", type=int)
    train.add_argument("--resume", action="store_true", help="continue runs from their checkpoint.npz when present")
    train.add_argument("--runs", type=int)
    train.add_argument("--seed", type=int)
    train.add_argument("--jobs", type=int)
    train.add_argument("--out", type=Path)

    report = commands.add_parser("report", help="aggregate run directories")
    report.add_argument("run_dirs", type=Path, nargs="+")
    report.add_argument("--out", type=Path, help="also write the table to this file")
    return parser


# =============================================================================
# MAIN
# =============================================================================

def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    try:
        settings = get_settings()
    except ValidationError as e:
        print(f"invalid environment: {_describe(e)}", file=sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=settings.log_level, format=settings.log_format)

    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-synth":
            cmd_gen_synth(args.spec, args.out)
        elif args.command == "train":
            cmd_train(args)
        else:
            print(cmd_report(args.run_dirs, args.out))
        return EXIT_OK
    except ConfigError as e:
        logger.error(f"❌ Configuration error: {e}")
        return EXIT_CONFIG
    except DataError as e:
        logger.error(f"❌ Data error: {e}")
        return EXIT_DATA
    except InvariantViolationError as e:
        logger.error(f"❌ Invariant violation: {e}", exc_info=True)
        return EXIT_INVARIANT
    except LadError as e:
        logger.error(f"❌ {e}", exc_info=True)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
