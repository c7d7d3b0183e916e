"""Shared pytest fixtures: small configs, synthetic domain pairs and CSV files."""
from pathlib import Path

import numpy as np
import pytest

from config.settings import get_settings
from data.datasets import save_features, save_labels
from data.synthetic import synth_gaussian_shift
from models.schemas import SyntheticSpec, TrainConfig


@pytest.fixture(autouse=True)
def fresh_settings():
    """Settings are cached per process; tests that touch LAD_* env vars need a fresh read."""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """A few epochs of a narrow network; enough to exercise every code path."""
    return TrainConfig(hidden_width=16, n_epochs=3, batch_size=16, learning_rate=0.01)


@pytest.fixture
def small_spec():
    return SyntheticSpec(
        num_classes=3,
        dim=4,
        n_source=50,
        n_target=40,
        mean_radius=4.0,
        class_spread=0.7,
        shift_rotation_degrees=20.0,
        source_class_proportions=[0.5, 0.3, 0.2],
        seed=7,
    )


@pytest.fixture
def small_pair(small_spec):
    """(source, target) with target labels attached for diagnostics."""
    return synth_gaussian_shift(small_spec)


@pytest.fixture
def pair_files(tmp_path: Path, small_pair):
    """source.csv, unlabeled target.csv and target_labels.csv as the CLI writes them."""
    source, target = small_pair
    paths = {
        "source": tmp_path / "source.csv",
        "target": tmp_path / "target.csv",
        "target_labels": tmp_path / "target_labels.csv",
    }
    save_features(source, paths["source"])
    save_features(target.without_labels(), paths["target"])
    save_labels(target, paths["target_labels"])
    return paths


def history_rows(history):
    """Snapshots without wall-clock time, for determinism comparisons."""
    return [s.model_dump(exclude={"wallclock"}) for s in history.snapshots]
