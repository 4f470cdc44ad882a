"""End-to-end detection: window the series, reconstruct, score, stitch.

Thresholds are calibrated from the validation score streams stored in
the checkpoint, so detection needs only the checkpoint and the series.
The global timeline covers the first floor(T/w)*w timesteps; detected
events are maximal runs of flagged points, and each event's duration
estimate comes from the temporal residual rows overlapping it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import data, diagnosis, model, ndgrad as ng
from .diagnosis import AnomalyReport, Thresholds
from .errors import ConfigError, InputError
from .statemat import state_matrices
from .synth import GroundTruthEvent
from .train import Checkpoint

__all__ = [
    "DetectedEvent",
    "DetectionResult",
    "calibrate_thresholds",
    "run_detect",
    "flag_runs",
    "overlapping_run_length",
]


@dataclass
class DetectedEvent:
    event_id: int
    start: int
    end: int
    duration_estimate: int
    flagged_sensor_count: int
    severity_rank: int = 0

    @property
    def severity_rank_key(self) -> tuple[int, int]:
        return (self.duration_estimate, self.flagged_sensor_count)


@dataclass
class DetectionResult:
    thresholds: Thresholds
    reports: list[AnomalyReport]
    point_scores: np.ndarray          # (covered,)
    point_flags: np.ndarray           # (covered,) bool
    temporal_row_scores: np.ndarray   # (covered,)
    temporal_row_flags: np.ndarray    # (covered,) bool
    sensor_scores: np.ndarray         # (n_windows, n)
    sensor_flags: np.ndarray          # (n_windows, n) bool
    events: list[DetectedEvent]
    residuals: list[dict[str, np.ndarray]]
    covered: int
    metrics: dict | None = None


def calibrate_thresholds(
    ckpt: Checkpoint,
    rule: str | None = None,
    r: float | None = None,
    beta: float | None = None,
    rel_temporal: float | None = None,
    rel_point: float | None = None,
) -> Thresholds:
    """Apply the chosen rule to each stored validation score stream."""
    train_meta = ckpt.meta.get("train", {})
    rule = rule or train_meta.get("rule", "betamax")
    r = r if r is not None else float(train_meta.get("r", 0.01))
    beta = beta if beta is not None else float(train_meta.get("beta", 1.5))
    if rel_temporal is None:
        rel_temporal = float(train_meta.get("rel_temporal", 0.25))
    if rel_point is None:
        rel_point = float(train_meta.get("rel_point", 0.1))
    th = Thresholds(rule=rule, r=r, beta=beta, rel_temporal=rel_temporal, rel_point=rel_point)
    point = ckpt.streams.get("valid/point_scores")
    if point is None:
        raise ConfigError("checkpoint has no validation score streams")
    th.delta_point = diagnosis.calibrate(point, rule, r=r, beta=beta)
    sensor = ckpt.streams.get("valid/sensor_row_scores")
    if sensor is not None:
        th.delta_sensor = diagnosis.calibrate(sensor, rule, r=r, beta=beta)
    temporal = ckpt.streams.get("valid/temporal_row_scores")
    if temporal is not None:
        th.delta_temporal = diagnosis.calibrate(temporal, rule, r=r, beta=beta)
    return th


def flag_runs(flags: np.ndarray) -> list[tuple[int, int]]:
    """Maximal half-open runs of True."""
    return diagnosis.labels_to_segments(flags)


def overlapping_run_length(runs: list[tuple[int, int]], start: int, end: int) -> int:
    """Total length of the runs that intersect [start, end)."""
    return sum(e - s for s, e in runs if s < end and e > start)


def run_detect(
    ckpt: Checkpoint,
    series_raw: np.ndarray,
    thresholds: Thresholds,
    labels: np.ndarray | None = None,
    truth_events: list[GroundTruthEvent] | None = None,
) -> DetectionResult:
    """Diagnose a raw series with a trained checkpoint and thresholds."""
    state = ckpt.state
    cfg = state.config
    if series_raw.ndim != 2 or series_raw.shape[1] != cfg.sensors:
        raise ConfigError(
            f"series has {series_raw.shape[1] if series_raw.ndim == 2 else '?'} sensors, "
            f"checkpoint expects {cfg.sensors}"
        )
    if series_raw.shape[0] < cfg.window:
        raise InputError(f"series length {series_raw.shape[0]} < window {cfg.window}")
    train_meta = ckpt.meta.get("train", {})
    tau_t, tau_s = train_meta.get("tau_t"), train_meta.get("tau_s")
    normalized = data.apply_norm(series_raw, ckpt.stats)
    windows = data.make_windows(normalized, cfg.window)
    covered = len(windows) * cfg.window

    reports: list[AnomalyReport] = []
    residuals: list[dict[str, np.ndarray]] = []
    with ng.no_grad():
        for win in windows:
            pair = state_matrices(win, tau_t, tau_s)
            out = model.forward(state, win.values, pair.temporal, pair.spatial)
            point_scores = diagnosis.anomaly_score(win.values, out)
            # within-window relative floor: clean points sharing a window with
            # an anomaly score a few times the calibrated ceiling (attention
            # mixes the anomalous rows into their reconstruction), while the
            # anomalous points sit orders of magnitude above the window peak;
            # the calibrated delta stays as the global floor
            point_cut = max(
                thresholds.delta_point, thresholds.rel_point * float(point_scores.max())
            )
            point_flags = point_scores > point_cut
            if out.spatial_rec is not None:
                sensor_scores, ranking = diagnosis.localize(pair.spatial, out.spatial_rec, out.maps)
            else:
                sensor_scores = np.zeros(cfg.sensors)
                ranking = list(range(cfg.sensors))
            sensor_flags = sensor_scores > thresholds.delta_sensor
            if out.temporal_rec is not None:
                duration, row_scores, row_flags = diagnosis.severity(
                    pair.temporal, out.temporal_rec, out.maps, thresholds.delta_temporal,
                    rel_cut=thresholds.rel_temporal,
                )
            else:
                duration = 0
                row_scores = np.zeros(cfg.window)
                row_flags = np.zeros(cfg.window, dtype=bool)
            reports.append(
                AnomalyReport(
                    window_start=win.start_index,
                    point_scores=point_scores,
                    point_flags=point_flags,
                    sensor_scores=sensor_scores,
                    sensor_flags=sensor_flags,
                    sensor_ranking=ranking,
                    temporal_row_scores=row_scores,
                    temporal_row_flags=row_flags,
                    duration_estimate=duration,
                )
            )
            res: dict[str, np.ndarray] = {}
            if out.temporal_rec is not None:
                res["temporal_residual"] = (pair.temporal - out.temporal_rec.value) ** 2
            if out.spatial_rec is not None:
                res["spatial_residual"] = (pair.spatial - out.spatial_rec.value) ** 2
            residuals.append(res)

    point_scores = np.concatenate([r.point_scores for r in reports])
    point_flags = np.concatenate([r.point_flags for r in reports])
    temporal_row_scores = np.concatenate([r.temporal_row_scores for r in reports])
    temporal_row_flags = np.concatenate([r.temporal_row_flags for r in reports])
    sensor_scores = np.stack([r.sensor_scores for r in reports])
    sensor_flags = np.stack([r.sensor_flags for r in reports])

    temporal_runs = flag_runs(temporal_row_flags)
    w = cfg.window
    events: list[DetectedEvent] = []
    for i, (start, end) in enumerate(flag_runs(point_flags)):
        touched = range(start // w, (end - 1) // w + 1)
        flagged_sensors = set()
        for wi in touched:
            flagged_sensors.update(np.flatnonzero(sensor_flags[wi]))
        events.append(
            DetectedEvent(
                event_id=i,
                start=start,
                end=end,
                duration_estimate=overlapping_run_length(temporal_runs, start, end),
                flagged_sensor_count=len(flagged_sensors),
            )
        )
    for rank, ev in enumerate(
        sorted(events, key=lambda e: (-e.severity_rank_key[0], -e.severity_rank_key[1], e.start)),
        start=1,
    ):
        ev.severity_rank = rank

    result = DetectionResult(
        thresholds=thresholds,
        reports=reports,
        point_scores=point_scores,
        point_flags=point_flags,
        temporal_row_scores=temporal_row_scores,
        temporal_row_flags=temporal_row_flags,
        sensor_scores=sensor_scores,
        sensor_flags=sensor_flags,
        events=events,
        residuals=residuals,
        covered=covered,
    )
    if labels is not None:
        result.metrics = _evaluate_against_truth(result, labels, truth_events, w)
    return result


def _event_ranking(result: DetectionResult, start: int, end: int, w: int) -> list[int]:
    """Sensor ranking for an event: scores summed over overlapping windows."""
    lo, hi = start // w, min((end - 1) // w + 1, result.sensor_scores.shape[0])
    agg = result.sensor_scores[lo:hi].sum(axis=0)
    return sorted(range(len(agg)), key=lambda i: (-agg[i], i))


def _evaluate_against_truth(
    result: DetectionResult,
    labels: np.ndarray,
    truth_events: list[GroundTruthEvent] | None,
    w: int,
) -> dict:
    covered = result.covered
    truth = np.asarray(labels).astype(bool)[:covered]
    segments = diagnosis.labels_to_segments(truth)
    adjusted = diagnosis.point_adjust(result.point_flags, segments)
    res = diagnosis.evaluate(adjusted, truth)
    detected = sum(1 for s, e in segments if result.point_flags[s:e].any())
    temporal_runs = flag_runs(result.temporal_row_flags)
    metrics: dict = {
        "precision": res.precision,
        "recall": res.recall,
        "f1": res.f1,
        "status": res.status,
        "events_total": len(segments),
        "events_detected": detected,
    }
    details = []
    duration_errors = []
    rankings, truth_sets = [], []
    for start, end in segments:
        est = overlapping_run_length(temporal_runs, start, end)
        duration_errors.append(abs(est - (end - start)))
        detail = {
            "start": start,
            "end": end,
            "true_duration": end - start,
            "estimated_duration": est,
        }
        if truth_events is not None:
            match = next((ev for ev in truth_events if ev.start < end and ev.end > start), None)
            if match is not None:
                ranking = _event_ranking(result, start, end, w)
                rankings.append(ranking)
                truth_sets.append(set(match.sensors))
                detail["true_sensors"] = sorted(match.sensors)
                detail["top3_sensors"] = ranking[:3]
        details.append(detail)
    if segments:
        metrics["mean_duration_abs_err"] = float(np.mean(duration_errors))
    if rankings:
        metrics["recall_at_3"] = diagnosis.recall_at_k(rankings, truth_sets, 3)
    metrics["event_details"] = details
    return metrics
