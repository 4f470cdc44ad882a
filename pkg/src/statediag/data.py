"""CSV ingestion, z-score normalization, and window slicing.

CSV files are UTF-8 and comma-separated with a header row of sensor
names; an optional trailing ``label`` column holds {0,1} per timestep.
Rows are in time order. Normalization statistics always come from the
training split and are applied, never re-estimated, elsewhere.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParseError
from .statemat import TimeWindow

__all__ = [
    "LABEL_COLUMN",
    "NormStats",
    "load_csv",
    "save_csv",
    "fit_norm_stats",
    "apply_norm",
    "split_train_valid",
    "make_windows",
    "drop_labeled_anomalies",
]

LABEL_COLUMN = "label"

log = logging.getLogger(__name__)


@dataclass
class NormStats:
    """Per-sensor mean and standard deviation from the training split."""

    mean: np.ndarray
    std: np.ndarray


def load_csv(path) -> tuple[list[str], np.ndarray, np.ndarray | None]:
    """Read (sensor names, values (T, n), labels or None) from ``path``.

    Ragged rows, non-numeric cells, and malformed labels raise
    ``ParseError`` naming the 1-based file line.
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: line 1: empty file") from None
        header = [h.strip() for h in header]
        has_labels = bool(header) and header[-1] == LABEL_COLUMN
        names = header[:-1] if has_labels else header
        if not names:
            raise ParseError(f"{path}: line 1: no sensor columns")
        width = len(header)
        rows: list[list[float]] = []
        labels: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise ParseError(
                    f"{path}: line {lineno}: expected {width} cells, got {len(row)}"
                )
            try:
                vals = [float(c) for c in (row[:-1] if has_labels else row)]
            except ValueError:
                raise ParseError(f"{path}: line {lineno}: non-numeric cell") from None
            if has_labels:
                cell = row[-1].strip()
                if cell not in ("0", "1"):
                    raise ParseError(f"{path}: line {lineno}: label must be 0 or 1, got {cell!r}")
                labels.append(int(cell))
            rows.append(vals)
    values = np.array(rows, dtype=np.float64)
    return names, values, (np.array(labels, dtype=np.int64) if has_labels else None)


def save_csv(path, names: list[str], values: np.ndarray, labels: np.ndarray | None = None) -> None:
    """Write a series (and optional labels) in the same layout load_csv reads."""
    values = np.asarray(values)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        header = list(names) + ([LABEL_COLUMN] if labels is not None else [])
        writer.writerow(header)
        for i in range(values.shape[0]):
            row = [repr(float(v)) for v in values[i]]
            if labels is not None:
                row.append(str(int(labels[i])))
            writer.writerow(row)


def fit_norm_stats(train_values: np.ndarray, std_floor: float = 1e-8) -> NormStats:
    """Per-column mean/std over the training split only."""
    mean = train_values.mean(axis=0)
    std = train_values.std(axis=0)
    return NormStats(mean=mean, std=np.maximum(std, std_floor))


def apply_norm(values: np.ndarray, stats: NormStats) -> np.ndarray:
    if values.shape[1] != stats.mean.shape[0]:
        raise InputError(
            f"apply_norm: series has {values.shape[1]} sensors, stats have {stats.mean.shape[0]}"
        )
    return (values - stats.mean) / stats.std


def split_train_valid(values: np.ndarray, valid_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """Contiguous tail split; the series is never shuffled across it."""
    if not (0.0 < valid_fraction < 1.0):
        raise InputError(f"valid_fraction must be in (0, 1), got {valid_fraction}")
    cut = int(round(values.shape[0] * (1.0 - valid_fraction)))
    if cut < 1 or cut >= values.shape[0]:
        raise InputError("split_train_valid: split leaves an empty side")
    return values[:cut], values[cut:]


def make_windows(values: np.ndarray, w: int, start_offset: int = 0) -> list[TimeWindow]:
    """Non-overlapping windows of length w; the trailing remainder is dropped."""
    t = values.shape[0]
    if t < w:
        raise InputError(f"make_windows: series length {t} < window {w}")
    return [
        TimeWindow(values[i * w : (i + 1) * w], start_index=start_offset + i * w)
        for i in range(t // w)
    ]


def drop_labeled_anomalies(values: np.ndarray, labels: np.ndarray | None) -> np.ndarray:
    """Remove rows labeled anomalous from a training series, with a warning."""
    if labels is None:
        return values
    mask = np.asarray(labels).astype(bool)
    if mask.any():
        log.warning(
            "training data contains %d labeled-anomalous rows; dropping them", int(mask.sum())
        )
        return values[~mask]
    return values
