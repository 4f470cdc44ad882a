"""Anomaly scoring, localization, severity, thresholds, and evaluation.

Everything here is inference-side and works on plain arrays: per-point
scores weight squared reconstruction error by a softmax over negated
series/temporal alignment, sensor scores weight the spatial residual
rows the same way via the cross-dimension alignment, and duration is
the count of temporal residual rows above their calibrated threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import losses, ndgrad as ng
from .errors import CalibrationError, InputError, ParameterError
from .model import AssociationMaps, ForwardOutput

__all__ = [
    "AnomalyReport",
    "Thresholds",
    "EvalResult",
    "softmin_weights",
    "anomaly_score",
    "localize",
    "severity",
    "quantile_threshold",
    "calibrate",
    "point_adjust",
    "labels_to_segments",
    "evaluate",
    "recall_at_k",
]


@dataclass
class AnomalyReport:
    """Per-window diagnosis results on the global timeline."""

    window_start: int
    point_scores: np.ndarray    # (w,)
    point_flags: np.ndarray     # (w,) bool
    sensor_scores: np.ndarray   # (n,)
    sensor_flags: np.ndarray    # (n,) bool
    sensor_ranking: list[int]
    temporal_row_scores: np.ndarray  # (w,)
    temporal_row_flags: np.ndarray   # (w,) bool
    duration_estimate: int

    @property
    def severity_rank_key(self) -> tuple[int, int]:
        return (self.duration_estimate, int(self.sensor_flags.sum()))


@dataclass
class Thresholds:
    """Calibrated decision thresholds for the three score streams.

    ``rel_temporal`` is the within-window relative floor for temporal row
    flags (see :func:`severity`); 0 disables it.
    """

    rule: str                 # "ratio" or "betamax"
    r: float = 0.01
    beta: float = 1.5
    delta_point: float = 0.0
    delta_sensor: float = 0.0
    delta_temporal: float = 0.0
    rel_temporal: float = 0.25
    rel_point: float = 0.1

    def __post_init__(self):
        if self.rule not in ("ratio", "betamax"):
            raise ParameterError(f"unknown threshold rule {self.rule!r}")
        if not (0.0 < self.r < 1.0):
            raise ParameterError(f"r must be in (0, 1), got {self.r}")
        if not (1.0 <= self.beta <= 2.0):
            raise ParameterError(f"beta must be in [1, 2], got {self.beta}")
        for name in ("rel_temporal", "rel_point"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ParameterError(f"{name} must be in [0, 1), got {v}")


def _values(x) -> np.ndarray:
    return x.value if isinstance(x, ng.Tensor2) else np.asarray(x)


def softmin_weights(vec: np.ndarray | None, size: int) -> np.ndarray:
    """softmax(-vec); uniform when no alignment vector is available."""
    if vec is None:
        return np.full(size, 1.0 / size)
    v = -np.asarray(vec, dtype=np.float64)
    v = v - v.max()
    e = np.exp(v)
    return e / e.sum()


def _series_temporal_vector(maps: AssociationMaps | None) -> np.ndarray | None:
    if maps is None or maps.temporal is None:
        return None
    with ng.no_grad():
        return losses.align_series_temporal(maps).value[:, 0].copy()


def _spatial_series_vector(maps: AssociationMaps | None) -> np.ndarray | None:
    if maps is None or maps.spatial is None:
        return None
    with ng.no_grad():
        acc = None
        for sp, se in zip(maps.spatial, maps.series):
            v = losses.cross_dim_kl_rowwise(sp, se).value[:, 0]
            acc = v if acc is None else acc + v
        return acc / len(maps.series)


def anomaly_score(window_values, out: ForwardOutput, maps: AssociationMaps | None = None) -> np.ndarray:
    """Per-timestep score: squared row error times the alignment softmax."""
    x = _values(window_values)
    rec = _values(out.values_rec)
    err = ((x - rec) ** 2).sum(axis=1)
    weights = softmin_weights(_series_temporal_vector(maps if maps is not None else out.maps), x.shape[0])
    return err * weights


def localize(spatial_state, spatial_rec, maps: AssociationMaps | None) -> tuple[np.ndarray, list[int]]:
    """Per-sensor score from the weighted spatial residual; plus ranking.

    The squared residual rows are weighted by the softmax over the
    negated per-sensor cross-dimension alignment, then summed per row.
    Ranking is score-descending with ascending-index tie-breaks.
    """
    s = _values(spatial_state)
    rec = _values(spatial_rec)
    res = (s - rec) ** 2
    weights = softmin_weights(_spatial_series_vector(maps), s.shape[0])
    scores = (res * weights[:, None]).sum(axis=1)
    ranking = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    return scores, ranking


def severity(
    temporal_state,
    temporal_rec,
    maps: AssociationMaps | None,
    delta_temporal: float,
    rel_cut: float = 0.0,
) -> tuple[int, np.ndarray, np.ndarray]:
    """Duration estimate: count of weighted temporal residual rows above delta.

    Returns (duration, row_scores, row_flags); row t of the temporal
    state matrix corresponds to timestep t of the window. ``rel_cut``
    optionally raises the flagging bar to that fraction of the window's
    peak row score: rows of a window holding a long anomaly are cross-
    contaminated (their residual carries the anomalous columns), so a
    threshold calibrated on clean data alone over-flags them, while the
    truly anomalous rows dominate the window peak by a wide margin.
    """
    t = _values(temporal_state)
    rec = _values(temporal_rec)
    res = (t - rec) ** 2
    weights = softmin_weights(_series_temporal_vector(maps), t.shape[0])
    row_scores = (res * weights[:, None]).sum(axis=1)
    cutoff = max(delta_temporal, rel_cut * float(row_scores.max()))
    flags = row_scores > cutoff
    return int(flags.sum()), row_scores, flags


# -- thresholds ---------------------------------------------------------------


def quantile_threshold(scores: np.ndarray, r: float) -> float:
    """(1 - r) quantile as an order statistic: the floor((1-r)*N)-th smallest."""
    s = np.sort(np.asarray(scores, dtype=np.float64).ravel())
    n = len(s)
    if n == 0:
        raise CalibrationError("quantile_threshold: empty score stream")
    k = int(np.floor((1.0 - r) * n))
    k = min(max(k, 1), n)
    return float(s[k - 1])


def calibrate(
    valid_scores: np.ndarray,
    rule: str,
    r: float = 0.01,
    beta: float = 1.5,
    labels: np.ndarray | None = None,
    beta_grid: int = 21,
) -> float:
    """One threshold from a validation score stream.

    ``ratio`` labels the top fraction r of validation scores anomalous
    and returns the boundary order statistic. ``betamax`` returns
    beta * max(scores); when binary labels accompany the scores, the max
    is taken over the normal-labeled scores and beta is chosen on an even
    grid over [1, 2] to maximize F1 on the stream.
    """
    s = np.asarray(valid_scores, dtype=np.float64).ravel()
    if s.size == 0:
        raise CalibrationError("calibrate: empty validation score stream")
    if rule == "ratio":
        return quantile_threshold(s, r)
    if rule == "betamax":
        if labels is not None:
            truth = np.asarray(labels).astype(bool).ravel()
            if truth.shape != s.shape:
                raise CalibrationError("calibrate: labels and scores lengths differ")
            if truth.any():
                m = float(s[~truth].max()) if (~truth).any() else float(s.max())
                best_beta, best_f1 = beta, -1.0
                for b in np.linspace(1.0, 2.0, beta_grid):
                    res = evaluate(s > b * m, truth)
                    if res.f1 > best_f1:
                        best_beta, best_f1 = float(b), res.f1
                return best_beta * m
        return beta * float(s.max())
    raise ParameterError(f"unknown threshold rule {rule!r}")


# -- evaluation ---------------------------------------------------------------


def labels_to_segments(labels: np.ndarray) -> list[tuple[int, int]]:
    """Contiguous runs of positive labels as half-open (start, end) pairs."""
    lab = np.asarray(labels).astype(bool).ravel()
    segments = []
    i = 0
    n = len(lab)
    while i < n:
        if lab[i]:
            j = i + 1
            while j < n and lab[j]:
                j += 1
            segments.append((i, j))
            i = j
        else:
            i += 1
    return segments


def point_adjust(pred_flags: np.ndarray, truth_segments: list[tuple[int, int]]) -> np.ndarray:
    """Mark a whole true segment positive when any of its points is flagged.

    Predictions outside every segment are untouched. Segments are
    half-open (start, end), must be in-range and non-overlapping.
    """
    pred = np.asarray(pred_flags).astype(bool).copy()
    n = len(pred)
    prev_end = -1
    for start, end in sorted(truth_segments):
        if start < 0 or end > n or start >= end:
            raise InputError(f"point_adjust: segment ({start}, {end}) out of range")
        if start < prev_end:
            raise InputError(f"point_adjust: overlapping truth segments at {start}")
        prev_end = end
        if pred[start:end].any():
            pred[start:end] = True
    return pred


@dataclass
class EvalResult:
    precision: float
    recall: float
    f1: float
    status: str = "ok"  # "ok" or "no-anomaly"


def evaluate(pred_flags: np.ndarray, truth: np.ndarray) -> EvalResult:
    """Point-wise precision/recall/F1; explicit status when truth is all-negative."""
    pred = np.asarray(pred_flags).astype(bool).ravel()
    t = np.asarray(truth).astype(bool).ravel()
    if pred.shape != t.shape:
        raise InputError(f"evaluate: lengths differ, {pred.shape} vs {t.shape}")
    if not t.any():
        return EvalResult(0.0, 0.0, 0.0, status="no-anomaly")
    tp = int((pred & t).sum())
    fp = int((pred & ~t).sum())
    fn = int((~pred & t).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalResult(precision, recall, f1)


def recall_at_k(rankings: list[list[int]], truth_sensor_sets: list[set[int]], k: int) -> float:
    """Fraction of events whose true sensors intersect the top-k ranking."""
    if len(rankings) != len(truth_sensor_sets):
        raise InputError("recall_at_k: rankings and truth sets differ in length")
    if not rankings:
        raise InputError("recall_at_k: no events")
    hits = sum(
        1 for rank, truth in zip(rankings, truth_sensor_sets) if set(rank[:k]) & set(truth)
    )
    return hits / len(rankings)
