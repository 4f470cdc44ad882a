"""Command-line interface.

Subcommands: ``synth`` (emit dataset CSVs), ``train`` (series to
checkpoint), ``detect`` (checkpoint + series to report bundle),
``eval`` (report + labels to metrics), ``gradcheck`` (finite-difference
suite), ``plotdata`` (residual/score files for external plotting).

Exit codes: 0 success, 1 usage, 2 data/config error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from . import data, diagnosis, report, synth
from .config import read_kv_file, synth_spec_from, train_config_from
from .detect import calibrate_thresholds, run_detect
from .errors import (
    CalibrationError,
    ConfigError,
    ContractError,
    InputError,
    NumericError,
    ParameterError,
    ParseError,
    ShapeError,
)
from .synth import GroundTruthEvent
from .train import fit, load_checkpoint, save_checkpoint

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; the CLI contract is 1
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="statediag", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="flat key=value config file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")

    p = sub.add_parser("synth", help="generate synthetic coupled-tank CSVs")
    common(p)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    common(p)
    p.add_argument("--data", type=Path, required=True, help="training series CSV")

    p = sub.add_parser("detect", help="run detection and write the report bundle")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True, help="series CSV (label column optional)")
    p.add_argument("--truth-events", type=Path, help="ground-truth events CSV for recall@k")
    p.add_argument("--threshold-rule", choices=["ratio", "betamax"], dest="rule")
    p.add_argument("--r", type=float, help="ratio-rule validation fraction")
    p.add_argument("--beta", type=float, help="betamax-rule multiplier in [1, 2]")
    p.add_argument("--no-figures", action="store_true", help="skip matplotlib output")

    p = sub.add_parser("eval", help="score a report against labels")
    common(p)
    p.add_argument("--report", type=Path, required=True, help="scores.csv from detect")
    p.add_argument("--data", type=Path, required=True, help="labeled series CSV")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    common(p)
    p.add_argument("--probes", type=int, default=200)

    p = sub.add_parser("plotdata", help="emit residual/score files for external plotting")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    return parser


def _load_kv(args) -> dict[str, str]:
    return read_kv_file(args.config) if args.config else {}


def _write_truth_events(path, events: list[GroundTruthEvent]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["event_id", "start", "end", "sensors"])
        for i, ev in enumerate(events):
            writer.writerow([i, ev.start, ev.end, "|".join(str(s) for s in ev.sensors)])


def _read_truth_events(path) -> list[GroundTruthEvent]:
    events = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for lineno, row in enumerate(reader, start=2):
            try:
                events.append(
                    GroundTruthEvent(
                        start=int(row["start"]),
                        end=int(row["end"]),
                        sensors=tuple(int(s) for s in row["sensors"].split("|")),
                    )
                )
            except (KeyError, ValueError, AttributeError):
                raise ParseError(f"{path}: line {lineno}: bad event row") from None
    return events


def _cmd_synth(args) -> int:
    kv = _load_kv(args)
    outdir = args.out
    outdir.mkdir(parents=True, exist_ok=True)
    has_custom = any(k.startswith("synth.") for k in kv)
    if has_custom:
        spec = synth_spec_from(kv, seed=args.seed)
        series, labels, events = synth.generate(spec)
        data.save_csv(outdir / "data.csv", synth.SENSOR_NAMES, series,
                      labels if spec.events else None)
        if events:
            _write_truth_events(outdir / "events.csv", events)
        print(f"wrote {outdir / 'data.csv'} ({spec.length} rows)")
    else:
        spec = synth.case_study_spec(seed=args.seed if args.seed is not None else 7)
        series, labels, events = synth.generate(spec)
        train_series, test_series, test_labels, test_events = synth.split_case_study(
            spec, series, labels, events
        )
        data.save_csv(outdir / "train.csv", synth.SENSOR_NAMES, train_series)
        data.save_csv(outdir / "test.csv", synth.SENSOR_NAMES, test_series, test_labels)
        _write_truth_events(outdir / "events.csv", test_events)
        print(f"wrote {outdir / 'train.csv'}, {outdir / 'test.csv'}, {outdir / 'events.csv'}")
    return EXIT_OK


def _cmd_train(args) -> int:
    kv = _load_kv(args)
    cfg = train_config_from(kv, overrides={"seed": args.seed})
    names, series, labels = data.load_csv(args.data)
    result = fit(series, cfg, labels=labels)
    args.out.mkdir(parents=True, exist_ok=True)
    ckpt_path = args.out / "checkpoint.bin"
    save_checkpoint(ckpt_path, result, cfg, names)
    log_path = args.out / "train_log.csv"
    with open(log_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "train_loss", "valid_loss", "seconds"])
        for s in result.result.log:
            writer.writerow([s.epoch, repr(s.train_loss), repr(s.valid_loss), f"{s.seconds:.2f}"])
    print(f"wrote {ckpt_path} (best valid loss {result.result.best_valid:.6f})")
    return EXIT_OK


def _cmd_detect(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    names, series, labels = data.load_csv(args.data)
    if ckpt.sensor_names and names != ckpt.sensor_names:
        raise ConfigError(
            f"{args.data}: sensor columns {names} do not match checkpoint {ckpt.sensor_names}"
        )
    thresholds = calibrate_thresholds(ckpt, rule=args.rule, r=args.r, beta=args.beta)
    truth_events = _read_truth_events(args.truth_events) if args.truth_events else None
    result = run_detect(ckpt, series, thresholds, labels=labels, truth_events=truth_events)
    paths = report.write_report(args.out, result, names, labels=labels,
                                figures=not args.no_figures)
    print(f"windows: {len(result.reports)}  events: {len(result.events)}")
    if result.metrics is not None:
        sys.stdout.write(report.write_metrics(None, result.metrics))
    print(f"report written to {paths['scores'].parent}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    flags = []
    with open(args.report, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        for lineno, row in enumerate(reader, start=2):
            try:
                flags.append(bool(int(row["flag"])))
            except (KeyError, ValueError):
                raise ParseError(f"{args.report}: line {lineno}: bad flag cell") from None
    if not flags:
        raise InputError(f"{args.report}: no rows")
    _, _, labels = data.load_csv(args.data)
    if labels is None:
        raise InputError(f"{args.data}: no label column")
    pred = np.array(flags, dtype=bool)
    truth = labels.astype(bool)[: len(pred)]
    segments = diagnosis.labels_to_segments(truth)
    adjusted = diagnosis.point_adjust(pred, segments)
    res = diagnosis.evaluate(adjusted, truth)
    detected = sum(1 for s, e in segments if pred[s:e].any())
    metrics = {
        "precision": res.precision,
        "recall": res.recall,
        "f1": res.f1,
        "events_total": len(segments),
        "events_detected": detected,
        "status": res.status,
    }
    sys.stdout.write(report.write_metrics(None, metrics))
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    # local imports keep CLI startup light
    from . import losses, model
    from .gradcheck import check_gradients
    from .statemat import TimeWindow, state_matrices

    seed = args.seed if args.seed is not None else 0
    cfg = model.ModelConfig(window=8, sensors=4, hidden=16, heads=2, blocks=1, dtype="f64")
    state = model.init_state(cfg, seed=seed)
    rng = np.random.default_rng(seed + 1)
    win = TimeWindow(rng.standard_normal((cfg.window, cfg.sensors)))
    pair = state_matrices(win)

    def build():
        out = model.forward(state, win.values, pair.temporal, pair.spatial)
        total, _ = losses.total_loss(out, win.values, pair.temporal, pair.spatial, lam=19.0)
        return total

    results = check_gradients(build, state.params, n_probes=args.probes,
                              h=1e-4, rng=np.random.default_rng(seed + 2))
    bad = [r for r in results if not r.ok]
    worst = max(results, key=lambda r: r.rel_err)
    print(f"probes:{len(results)} failed:{len(bad)} max_rel_err:{worst.rel_err:.3e} ({worst.name})")
    for r in bad[:10]:
        print(f"FAIL {r.name}{r.index}: analytic {r.analytic:.6e} numeric {r.numeric:.6e}")
    if bad:
        raise NumericError(f"gradient check failed on {len(bad)} of {len(results)} probes")
    return EXIT_OK


def _cmd_plotdata(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    _, series, labels = data.load_csv(args.data)
    thresholds = calibrate_thresholds(ckpt)
    result = run_detect(ckpt, series, thresholds, labels=labels)
    args.out.mkdir(parents=True, exist_ok=True)
    report.write_scores_csv(args.out / "scores.csv", result)
    with open(args.out / "temporal_rows.csv", "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["timestep", "row_score", "flag"])
        for t in range(result.covered):
            writer.writerow(
                [t, repr(float(result.temporal_row_scores[t])), int(result.temporal_row_flags[t])]
            )
    report.write_residual_dump(args.out / "residuals_all.bin", result, limit_to_flagged=False)
    print(f"wrote plot data to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "detect": _cmd_detect,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "plotdata": _cmd_plotdata,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except (ParseError, InputError, ConfigError, CalibrationError, ParameterError,
            ShapeError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, ContractError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
