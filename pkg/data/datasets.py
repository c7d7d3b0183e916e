"""
Feature datasets and their CSV representation.

File format (UTF-8, LF line endings, '.' decimal separator):

    # num_classes=K            <- optional metadata line
    id,label,f0,f1,...,f{d-1}  <- or id,f0,... for an unlabeled dataset
    img_001,3,0.125,...

Features are written with 17 significant digits so float64 values survive a
save/load round trip bit-exactly. A companion labels file (id,label) can
carry held-out target labels for diagnostics.
"""
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from utils.errors import DataError, DataParseError

logger = logging.getLogger(__name__)

NUM_CLASSES_KEY = "num_classes"
FLOAT_FORMAT = "%.17g"
NAN_LITERALS = {"nan", "+nan", "-nan"}
FIELD_COUNT_ERROR = re.compile(r"Expected (\d+) fields in line (\d+), saw (\d+)")

PathLike = Union[str, Path]


@dataclass
class FeatureDataset:
    """Pre-extracted feature vectors with optional class labels."""
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    num_classes: Optional[int] = None
    ids: Optional[List[str]] = None
    name: str = ""

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError(f"{self.name or 'dataset'}: features must be 2-D, got {self.features.shape}")
        if not np.isfinite(self.features).all():
            row = int(np.flatnonzero(~np.isfinite(self.features).all(axis=1))[0])
            raise DataError(f"{self.name or 'dataset'}: non-finite feature in row {row}")
        n = len(self.features)
        if self.ids is not None:
            self.ids = [str(i) for i in self.ids]
            if len(self.ids) != n:
                raise DataError(f"{self.name or 'dataset'}: {len(self.ids)} ids for {n} rows")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise DataError(f"{self.name or 'dataset'}: {self.labels.shape[0]} labels for {n} rows")
            if self.num_classes is None and n:
                self.num_classes = int(self.labels.max()) + 1
            if n and (self.labels.min() < 0 or self.labels.max() >= (self.num_classes or 0)):
                raise DataError(
                    f"{self.name or 'dataset'}: labels must lie in [0, {self.num_classes})"
                )

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def row_ids(self) -> List[str]:
        """Explicit ids, or row indices when the dataset has none."""
        return self.ids if self.ids is not None else [str(i) for i in range(len(self))]

    def without_labels(self) -> "FeatureDataset":
        return replace(self, labels=None)


# =============================================================================
# Loading
# =============================================================================

def _read_metadata(path: Path) -> Optional[int]:
    try:
        with path.open("r", encoding="utf-8") as fh:
            first = fh.readline()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if not first.startswith("#"):
        return None
    key, _, value = first.lstrip("#").strip().partition("=")
    if key.strip() != NUM_CLASSES_KEY:
        raise DataParseError(f"{path}: unknown metadata {first.strip()!r}", line=1)
    try:
        num_classes = int(value)
    except ValueError:
        raise DataParseError(f"{path}: num_classes must be an integer, got {value.strip()!r}", line=1)
    if num_classes < 1:
        raise DataParseError(f"{path}: num_classes must be >= 1", line=1)
    return num_classes


def _read_frame(path: Path, skip: int) -> pd.DataFrame:
    """
    Read the header and body as strings. The header is parsed as an ordinary
    row, so the C tokenizer rejects any later row with more fields than it;
    shorter rows come back padded with empty cells.
    """
    try:
        with path.open("r", encoding="utf-8", newline="") as fh:
            for _ in range(skip):
                fh.readline()
            raw = pd.read_csv(fh, header=None, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise DataParseError(f"{path}: missing header", line=skip + 1)
    except pd.errors.ParserError as e:
        match = FIELD_COUNT_ERROR.search(str(e))
        if match is None:
            raise DataParseError(f"{path}: {e}")
        expected, line, saw = map(int, match.groups())
        raise DataParseError(f"{path}: expected {expected} fields as in the header, saw {saw}", line=skip + line)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e

    raw = raw.fillna("")
    frame = raw.iloc[1:].reset_index(drop=True)
    frame.columns = [str(c) for c in raw.iloc[0].tolist()]
    return frame


def _parse_numeric(frame: pd.DataFrame, path: Path, first_line: int) -> np.ndarray:
    """Strict float parsing; returns a (rows, cols) float64 array."""
    if frame.empty:
        return np.empty((len(frame), frame.shape[1]), dtype=np.float64)
    values = frame.apply(pd.to_numeric, errors="coerce")
    nan_literal = frame.apply(lambda col: col.str.strip().str.lower().isin(NAN_LITERALS))
    bad = values.isna().to_numpy() & ~nan_literal.to_numpy()
    if bad.any():
        r, c = map(int, np.argwhere(bad)[0])
        raise DataParseError(
            f"{path}: non-numeric cell {frame.iat[r, c]!r} in column {frame.columns[c]}",
            line=first_line + r,
        )
    array = frame.to_numpy(dtype=str).astype(np.float64).reshape(len(frame), frame.shape[1])
    finite = np.isfinite(array)
    if not finite.all():
        r = int(np.flatnonzero(~finite.all(axis=1))[0])
        raise DataError(f"{path}: line {first_line + r}: NaN or infinite feature value")
    return array


def load_features(path: PathLike) -> FeatureDataset:
    """Parse a feature CSV; see the module docstring for the format."""
    path = Path(path)
    num_classes = _read_metadata(path)
    skip = 0 if num_classes is None else 1
    header_line = skip + 1
    frame = _read_frame(path, skip)

    columns = list(frame.columns)
    if not columns or columns[0] != "id":
        raise DataParseError(f"{path}: header must start with 'id', got {columns[:1]}", line=header_line)
    has_labels = len(columns) > 1 and columns[1] == "label"
    feature_cols = columns[2:] if has_labels else columns[1:]
    expected = [f"f{j}" for j in range(len(feature_cols))]
    if feature_cols != expected:
        raise DataParseError(f"{path}: feature columns must be f0..f{{d-1}}, got {feature_cols}", line=header_line)

    features = _parse_numeric(frame[feature_cols], path, header_line + 1)

    labels = None
    if has_labels:
        raw = frame[["label"]]
        numeric = _parse_numeric(raw, path, header_line + 1)[:, 0]
        if len(numeric) and not np.all(numeric == np.round(numeric)):
            r = int(np.flatnonzero(numeric != np.round(numeric))[0])
            raise DataParseError(f"{path}: label {raw.iat[r, 0]!r} is not an integer", line=header_line + 1 + r)
        labels = numeric.astype(np.int64)

    dataset = FeatureDataset(
        features=features,
        labels=labels,
        num_classes=num_classes,
        ids=frame["id"].tolist(),
        name=path.stem,
    )
    logger.info(
        f"Loaded {path}: {len(dataset)} rows, dim {dataset.dim}, "
        f"labels={'yes' if has_labels else 'no'}, K={dataset.num_classes}"
    )
    return dataset


def load_labels(path: PathLike) -> Dict[str, int]:
    """Read an id,label file into a mapping."""
    path = Path(path)
    frame = _read_frame(path, 0)
    if list(frame.columns) != ["id", "label"]:
        raise DataParseError(f"{path}: header must be 'id,label', got {list(frame.columns)}", line=1)
    numeric = _parse_numeric(frame[["label"]], path, 2)[:, 0]
    if len(numeric) and not np.all(numeric == np.round(numeric)):
        raise DataParseError(f"{path}: labels must be integers")
    return dict(zip(frame["id"].tolist(), numeric.astype(np.int64).tolist()))


def attach_labels(
    dataset: FeatureDataset,
    labels_by_id: Dict[str, int],
    num_classes: Optional[int] = None,
) -> FeatureDataset:
    """Return a copy of dataset carrying the labels of its ids."""
    ids = dataset.row_ids()
    missing = [i for i in ids if i not in labels_by_id]
    if missing:
        raise DataError(f"{dataset.name}: no label for ids {missing[:5]}{'...' if len(missing) > 5 else ''}")
    return replace(
        dataset,
        labels=np.array([labels_by_id[i] for i in ids], dtype=np.int64),
        num_classes=num_classes if num_classes is not None else dataset.num_classes,
    )


# =============================================================================
# Saving
# =============================================================================

def save_features(dataset: FeatureDataset, path: PathLike) -> None:
    """Write dataset as CSV; the label column is omitted for unlabeled data."""
    path = Path(path)
    frame = pd.DataFrame(dataset.features, columns=[f"f{j}" for j in range(dataset.dim)])
    frame.insert(0, "id", dataset.row_ids())
    if dataset.has_labels:
        frame.insert(1, "label", dataset.labels)
    try:
        with path.open("w", encoding="utf-8", newline="") as fh:
            if dataset.num_classes is not None:
                fh.write(f"# {NUM_CLASSES_KEY}={dataset.num_classes}\n")
            frame.to_csv(fh, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e
    logger.debug(f"Wrote {len(dataset)} rows to {path}")


def save_labels(dataset: FeatureDataset, path: PathLike) -> None:
    """Write the id,label sidecar of a labeled dataset."""
    if not dataset.has_labels:
        raise DataError(f"{dataset.name}: dataset has no labels to write")
    path = Path(path)
    frame = pd.DataFrame({"id": dataset.row_ids(), "label": dataset.labels})
    try:
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e
