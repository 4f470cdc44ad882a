"""Report files: delimited scores/sensors/events, residual dumps, figures.

Every detection run writes three CSVs plus a residual-matrix container
for plot tooling, and renders matplotlib figures (score trace, sensor
bars, one residual heatmap panel per event) next to them.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .container import save_container
from .detect import DetectionResult

__all__ = [
    "write_scores_csv",
    "write_sensors_csv",
    "write_events_csv",
    "write_metrics",
    "write_residual_dump",
    "render_figures",
    "write_report",
]

MAX_EVENT_FIGURES = 8


def _fmt(x: float) -> str:
    return repr(float(x))


def write_scores_csv(path, result: DetectionResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["timestep", "score", "flag"])
        for t in range(result.covered):
            writer.writerow([t, _fmt(result.point_scores[t]), int(result.point_flags[t])])


def aggregate_sensor_scores(result: DetectionResult) -> np.ndarray:
    """Per-sensor maximum over windows, comparable to delta_sensor."""
    return result.sensor_scores.max(axis=0)


def write_sensors_csv(path, result: DetectionResult, names: list[str]) -> None:
    agg = aggregate_sensor_scores(result)
    order = sorted(range(len(agg)), key=lambda i: (-agg[i], i))
    rank = {sensor: pos + 1 for pos, sensor in enumerate(order)}
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["sensor", "score", "flag", "rank"])
        for i, name in enumerate(names):
            flag = int(agg[i] > result.thresholds.delta_sensor)
            writer.writerow([name, _fmt(agg[i]), flag, rank[i]])


def write_events_csv(path, result: DetectionResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["event_id", "start", "end", "duration_estimate", "flagged_sensor_count", "severity_rank"]
        )
        for ev in result.events:
            writer.writerow(
                [ev.event_id, ev.start, ev.end, ev.duration_estimate,
                 ev.flagged_sensor_count, ev.severity_rank]
            )


def write_metrics(path, metrics: dict) -> str:
    """Key:value lines; nested event details are omitted from the text."""
    lines = []
    for key in (
        "precision", "recall", "f1", "recall_at_3",
        "events_total", "events_detected", "mean_duration_abs_err", "status",
    ):
        if key in metrics:
            value = metrics[key]
            lines.append(f"{key}:{_fmt(value) if isinstance(value, float) else value}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def write_residual_dump(path, result: DetectionResult, limit_to_flagged: bool = True) -> None:
    """Residual matrices in the checkpoint container format."""
    tensors: dict[str, np.ndarray] = {}
    for report, res in zip(result.reports, result.residuals):
        if limit_to_flagged and not report.point_flags.any():
            continue
        for key, mat in res.items():
            tensors[f"window{report.window_start}/{key}"] = mat
    meta = {"kind": "residuals", "covered": result.covered}
    save_container(path, tensors, meta)


def render_figures(outdir: Path, result: DetectionResult, names: list[str],
                   labels: np.ndarray | None = None) -> list[Path]:
    written: list[Path] = []

    fig, ax = plt.subplots(figsize=(10, 3.2))
    ax.plot(result.point_scores, lw=0.7, label="anomaly score")
    ax.axhline(result.thresholds.delta_point, color="tab:red", lw=0.8, label="threshold")
    if labels is not None:
        truth = np.asarray(labels).astype(bool)[: result.covered]
        for i, (s, e) in enumerate(_runs(truth)):
            ax.axvspan(s, e, color="tab:orange", alpha=0.25,
                       label="true anomaly" if i == 0 else None)
    ax.set_xlabel("timestep")
    ax.set_ylabel("score")
    if (result.point_scores > 0).all() and result.thresholds.delta_point > 0:
        ax.set_yscale("log")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    p = outdir / "scores.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    agg = aggregate_sensor_scores(result)
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar(range(len(agg)), agg, color="tab:blue")
    ax.axhline(result.thresholds.delta_sensor, color="tab:red", lw=0.8)
    ax.set_xticks(range(len(agg)))
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=7)
    ax.set_ylabel("max sensor score")
    fig.tight_layout()
    p = outdir / "sensors.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    written.append(p)

    w = result.reports[0].point_scores.shape[0] if result.reports else 0
    for ev in result.events[:MAX_EVENT_FIGURES]:
        wi = ev.start // w
        res = result.residuals[wi]
        panels = [k for k in ("temporal_residual", "spatial_residual") if k in res]
        if not panels:
            continue
        fig, axes = plt.subplots(1, len(panels), figsize=(4.2 * len(panels), 3.6))
        if len(panels) == 1:
            axes = [axes]
        for ax, key in zip(axes, panels):
            im = ax.imshow(res[key], aspect="auto", cmap="magma")
            ax.set_title(f"event {ev.event_id}: {key.replace('_', ' ')}", fontsize=9)
            fig.colorbar(im, ax=ax, fraction=0.046)
        fig.tight_layout()
        p = outdir / f"residuals_event{ev.event_id}.png"
        fig.savefig(p, dpi=120)
        plt.close(fig)
        written.append(p)
    return written


def _runs(flags: np.ndarray) -> list[tuple[int, int]]:
    out = []
    i, n = 0, len(flags)
    while i < n:
        if flags[i]:
            j = i + 1
            while j < n and flags[j]:
                j += 1
            out.append((i, j))
            i = j
        else:
            i += 1
    return out


def write_report(outdir, result: DetectionResult, names: list[str],
                 labels: np.ndarray | None = None, figures: bool = True) -> dict[str, Path]:
    """Write the full report bundle into ``outdir``; returns written paths."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "scores": outdir / "scores.csv",
        "sensors": outdir / "sensors.csv",
        "events": outdir / "events.csv",
        "residuals": outdir / "residuals.bin",
    }
    write_scores_csv(paths["scores"], result)
    write_sensors_csv(paths["sensors"], result, names)
    write_events_csv(paths["events"], result)
    write_residual_dump(paths["residuals"], result)
    if result.metrics is not None:
        paths["metrics"] = outdir / "metrics.txt"
        write_metrics(paths["metrics"], result.metrics)
    if figures:
        for p in render_figures(outdir, result, names, labels):
            paths[p.stem] = p
    return paths
