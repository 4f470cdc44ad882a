"""Acceptance suite: one test per criterion, one printed pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the criterion
lines; the whole suite needs a few minutes of CPU.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from statediag import data, diagnosis, losses, model, ndgrad as ng, report, synth
from statediag.config import TrainConfig
from statediag.detect import calibrate_thresholds, run_detect
from statediag.gradcheck import check_gradients
from statediag.statemat import (
    TimeWindow,
    spatial_state_matrix,
    state_matrices,
    temporal_state_matrix,
)
from statediag.train import fit, load_checkpoint, save_checkpoint


def criterion(number: int, passed: bool, detail: str) -> None:
    print(f"[criterion {number}] {'PASS' if passed else 'FAIL'}: {detail}", flush=True)
    assert passed, f"criterion {number}: {detail}"


# -- 1: gradient correctness --------------------------------------------------


def test_criterion_1_gradient_correctness():
    t0 = time.time()
    cfg = model.ModelConfig(window=8, sensors=4, hidden=16, heads=2, blocks=1, dtype="f64")
    state = model.init_state(cfg, seed=1)
    rng = np.random.default_rng(5)
    win = TimeWindow(rng.standard_normal((8, 4)))
    pair = state_matrices(win)

    def build():
        out = model.forward(state, win.values, pair.temporal, pair.spatial)
        total, _ = losses.total_loss(out, win.values, pair.temporal, pair.spatial, lam=19.0)
        return total

    results = check_gradients(
        build, state.params, n_probes=200, h=1e-4, rel_tol=1e-3,
        rng=np.random.default_rng(2),
    )
    elapsed = time.time() - t0
    bad = [r for r in results if not r.ok]
    worst = max(r.rel_err for r in results)
    criterion(
        1,
        len(results) >= 200 and not bad and elapsed < 120.0,
        f"{len(results)} probes, {len(bad)} failures, worst rel err {worst:.2e}, {elapsed:.1f}s",
    )


# -- 2: oracle equivalence ----------------------------------------------------

EPS = 1e-12


def oracle_temporal(values, tau):
    w = values.shape[0]
    out = np.zeros((w, w))
    for i in range(w):
        for j in range(w):
            out[i, j] = sum(values[i, k] * values[j, k] for k in range(values.shape[1])) / tau
    return out


def oracle_spatial(values, tau):
    n = values.shape[1]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            out[i, j] = sum(values[t, i] * values[t, j] for t in range(values.shape[0])) / tau
    return out


def oracle_sym_kl_rows(p, q):
    out = np.zeros(p.shape[0])
    for i in range(p.shape[0]):
        fwd = sum(p[i, j] * (math.log(p[i, j] + EPS) - math.log(q[i, j] + EPS))
                  for j in range(p.shape[1]))
        rev = sum(q[i, j] * (math.log(q[i, j] + EPS) - math.log(p[i, j] + EPS))
                  for j in range(p.shape[1]))
        out[i] = fwd + rev
    return out


def oracle_softmin(vec):
    e = np.exp(-(vec - vec.min()))
    return e / e.sum()


def oracle_resample(dist, dst):
    src = len(dist)
    out = np.zeros(dst)
    ratio = src / dst
    for j in range(dst):
        lo, hi = j * ratio, (j + 1) * ratio
        for i in range(src):
            overlap = min(i + 1.0, hi) - max(float(i), lo)
            if overlap > 0:
                out[j] += overlap * dist[i]
    return out / out.sum()


def rand_stochastic(rng, rows, cols):
    m = rng.uniform(0.02, 1.0, size=(rows, cols))
    return m / m.sum(axis=1, keepdims=True)


def make_maps(rng, w, n, layers):
    wrap = lambda ms: [ng.tensor(m) for m in ms]
    return model.AssociationMaps(
        series=wrap([rand_stochastic(rng, w, w) for _ in range(layers)]),
        temporal=wrap([rand_stochastic(rng, w, w) for _ in range(layers)]),
        spatial=wrap([rand_stochastic(rng, n, n) for _ in range(layers)]),
    )


def oracle_series_temporal_vector(maps):
    acc = np.zeros(maps.series[0].value.shape[0])
    for s, t in zip(maps.series, maps.temporal):
        acc += oracle_sym_kl_rows(s.value, t.value)
    return acc / len(maps.series)


def oracle_spatial_series_vector(maps):
    n = maps.spatial[0].value.shape[0]
    w = maps.series[0].value.shape[0]
    dst = min(n, w)
    acc = np.zeros(n)
    for sp, se in zip(maps.spatial, maps.series):
        pooled = oracle_resample(se.value.mean(axis=0), dst)
        for i in range(n):
            acc[i] += oracle_sym_kl_rows(
                oracle_resample(sp.value[i], dst)[None, :], pooled[None, :]
            )[0]
    return acc / len(maps.series)


def test_criterion_2_oracle_equivalence():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(50):
        w = int(rng.integers(4, 12))
        n = int(rng.integers(2, 7))
        layers = int(rng.integers(1, 4))
        values = rng.standard_normal((w, n))
        win = TimeWindow(values)
        tau_t, tau_s = float(rng.uniform(0.5, 5)), float(rng.uniform(0.5, 5))

        d1 = np.abs(temporal_state_matrix(win, tau_t) - oracle_temporal(values, tau_t)).max()
        d2 = np.abs(spatial_state_matrix(win, tau_s) - oracle_spatial(values, tau_s)).max()

        p, q = rand_stochastic(rng, w, w), rand_stochastic(rng, w, w)
        d3 = np.abs(losses.sym_kl_rows(p, q).value[:, 0] - oracle_sym_kl_rows(p, q)).max()

        maps = make_maps(rng, w, n, layers)
        rec = values + 0.3 * rng.standard_normal((w, n))
        out = model.ForwardOutput(
            values_rec=ng.tensor(rec), temporal_rec=None, spatial_rec=None, maps=maps
        )
        err = np.array([np.dot(values[t] - rec[t], values[t] - rec[t]) for t in range(w)])
        expected_scores = err * oracle_softmin(oracle_series_temporal_vector(maps))
        d4 = np.abs(diagnosis.anomaly_score(values, out) - expected_scores).max()

        s_state = oracle_spatial(values, tau_s)
        s_rec = s_state + 0.4 * rng.standard_normal((n, n))
        weights = oracle_softmin(oracle_spatial_series_vector(maps))
        expected_loc = (((s_state - s_rec) ** 2) * weights[:, None]).sum(axis=1)
        got_loc, _ = diagnosis.localize(s_state, s_rec, maps)
        d5 = np.abs(got_loc - expected_loc).max()

        t_state = oracle_temporal(values, tau_t)
        t_rec = t_state + 0.4 * rng.standard_normal((w, w))
        wvec = oracle_softmin(oracle_series_temporal_vector(maps))
        expected_rows = (((t_state - t_rec) ** 2) * wvec[:, None]).sum(axis=1)
        # delta strictly between two order statistics so the count is stable
        ordered = np.sort(expected_rows)
        delta = float((ordered[w // 2 - 1] + ordered[w // 2]) / 2.0)
        duration, rows, _ = diagnosis.severity(t_state, t_rec, maps, delta)
        d6 = np.abs(rows - expected_rows).max()
        dur_ok = duration == int((expected_rows > delta).sum())

        worst = max(worst, d1, d2, d3, d4, d5, d6)
        assert dur_ok
    criterion(2, worst < 1e-8, f"50 random instances x 6 operations, worst abs err {worst:.2e}")


# -- 3: attention fidelity ----------------------------------------------------


def literal_attention(h, wq, wk, wv, wo, bo, heads):
    """Step-by-step transcription: project, split per head, per-head row
    softmax of sqrt(heads/d) Q K^T, apply to values, concat, project out."""
    q, k, v = h @ wq, h @ wk, h @ wv
    d = q.shape[1]
    dh = d // heads
    outs, maps = [], []
    for l in range(heads):
        ql, kl, vl = (m[:, l * dh : (l + 1) * dh] for m in (q, k, v))
        logits = math.sqrt(heads / d) * (ql @ kl.T)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        attn = e / e.sum(axis=1, keepdims=True)
        maps.append(attn)
        outs.append(attn @ vl)
    return np.concatenate(outs, axis=1) @ wo + bo, np.mean(maps, axis=0)


def test_criterion_3_attention_matches_stepwise_oracle():
    cfg = model.ModelConfig(window=4, sensors=3, hidden=4, heads=2, blocks=1, dtype="f64")
    state = model.init_state(cfg, seed=3)
    rng = np.random.default_rng(4)
    worst = 0.0
    for branch, rows in (("series", 4), ("temporal", 4), ("spatial", 3)):
        h = ng.tensor(rng.standard_normal((rows, 4)), dtype=np.float64)
        out, amap = model.attention_block(cfg, state, 0, branch, h)
        p = state.params
        exp_out, exp_map = literal_attention(
            h.value,
            p[f"block0/{branch}/wq"].value, p[f"block0/{branch}/wk"].value,
            p[f"block0/{branch}/wv"].value, p[f"block0/{branch}/wo"].value,
            p[f"block0/{branch}/bo"].value, heads=2,
        )
        worst = max(worst, np.abs(out.value - exp_out).max(), np.abs(amap.value - exp_map).max())
    criterion(3, worst < 1e-10, f"w=4 n=3 d=4 h=2, worst abs err {worst:.2e}")


# -- 4: distribution invariants -----------------------------------------------


def test_criterion_4_distribution_invariants():
    rng = np.random.default_rng(6)
    cfg = model.ModelConfig(window=10, sensors=5, hidden=16, heads=4, blocks=3, dtype="f64")
    state = model.init_state(cfg, seed=7)
    row_err = 0.0
    kl_min = np.inf
    for _ in range(5):
        win = TimeWindow(rng.standard_normal((10, 5)))
        pair = state_matrices(win)
        out = model.forward(state, win.values, pair.temporal, pair.spatial)
        for group in (out.maps.series, out.maps.temporal, out.maps.spatial):
            for m in group:
                row_err = max(row_err, np.abs(m.value.sum(axis=1) - 1.0).max())
        _, lb = losses.total_loss(out, win.values, pair.temporal, pair.spatial, 19.0)
        kl_min = min(
            kl_min,
            lb.align_series_temporal, lb.align_series_spatial, lb.align_temporal_spatial,
            lb.pointwise_series_temporal.min(), lb.rowwise_spatial_series.min(),
        )
    for _ in range(200):
        p = rand_stochastic(rng, 6, 6)
        q = rand_stochastic(rng, 6, 6)
        kl_min = min(kl_min, losses.sym_kl_rows(p, q).value.min(),
                     losses.cross_dim_kl(p, rand_stochastic(rng, 4, 4)).item())

    adjust_ok = True
    for _ in range(1000):
        n = int(rng.integers(5, 80))
        truth = rng.random(n) < 0.3
        segments = diagnosis.labels_to_segments(truth)
        pred = rng.random(n) < 0.2
        adj = diagnosis.point_adjust(pred, segments)
        idempotent = np.array_equal(diagnosis.point_adjust(adj, segments), adj)
        extra = pred | (rng.random(n) < 0.15)
        monotone = bool((diagnosis.point_adjust(extra, segments) | adj).sum()
                        == diagnosis.point_adjust(extra, segments).sum())
        adjust_ok = adjust_ok and idempotent and monotone
    criterion(
        4,
        row_err < 1e-5 and kl_min > -1e-9 and adjust_ok,
        f"map row-sum err {row_err:.2e}, min KL {kl_min:.2e}, "
        f"point_adjust idempotent+monotone on 1000 cases: {adjust_ok}",
    )


# -- 5: synthetic case study --------------------------------------------------

CASE_STUDY_CFG = TrainConfig(
    window=100, batch_size=16, lr=1e-3, max_epochs=12, patience=3, seed=0, beta=2.0
)


@pytest.fixture(scope="module")
def case_study(tmp_path_factory):
    spec = synth.case_study_spec(seed=7)
    series, labels, events = synth.generate(spec)
    train_series, test_series, test_labels, test_events = synth.split_case_study(
        spec, series, labels, events
    )
    t0 = time.time()
    res = fit(train_series, CASE_STUDY_CFG)
    path = tmp_path_factory.mktemp("case") / "checkpoint.bin"
    save_checkpoint(path, res, CASE_STUDY_CFG, synth.SENSOR_NAMES)
    return {
        "ckpt_path": path,
        "test_series": test_series,
        "test_labels": test_labels,
        "test_events": test_events,
        "train_seconds": time.time() - t0,
    }


def test_criterion_5_synthetic_case_study(case_study):
    t0 = time.time()
    ckpt = load_checkpoint(case_study["ckpt_path"])
    thresholds = calibrate_thresholds(ckpt)
    result = run_detect(
        ckpt, case_study["test_series"], thresholds,
        labels=case_study["test_labels"], truth_events=case_study["test_events"],
    )
    elapsed = case_study["train_seconds"] + (time.time() - t0)
    m = result.metrics
    durs = [(d["true_duration"], d["estimated_duration"]) for d in m["event_details"]]
    within = sum(abs(est - true) <= 0.2 * true for true, est in durs)
    order_by_est = [true for true, _ in sorted(durs, key=lambda x: -x[1])]
    order_ok = order_by_est == sorted((true for true, _ in durs), reverse=True)
    ok = (
        m["f1"] >= 0.90
        and m["events_detected"] == 6
        and m["recall_at_3"] >= 0.90
        and within >= 5
        and order_ok
        and elapsed < 900.0
    )
    criterion(
        5,
        ok,
        f"F1 {m['f1']:.4f}, detected {m['events_detected']}/6, recall@3 "
        f"{m['recall_at_3']:.2f}, durations within 20%: {within}/6, severity order "
        f"{'exact' if order_ok else 'WRONG'}, {elapsed:.0f}s",
    )


# -- 6: training sanity -------------------------------------------------------

# frozen regression fixture (seeded run recorded on the reference platform)
FIXTURE_EPOCH0 = 17419.47
FIXTURE_EPOCH5 = 3728.88


def test_criterion_6_training_sanity():
    series, _, _ = synth.generate(synth.SynthSpec(length=8000, seed=13))
    cfg = TrainConfig(window=100, batch_size=16, lr=1e-3, max_epochs=5, patience=5, seed=0)
    train_part, _ = data.split_train_valid(series, cfg.valid_fraction)
    stats = data.fit_norm_stats(train_part)
    wins = data.make_windows(data.apply_norm(train_part, stats), cfg.window)
    state0 = model.init_state(cfg.model_config(7), seed=cfg.seed)
    with ng.no_grad():
        epoch0 = float(np.mean([
            losses.total_loss(
                model.forward(state0, w.values, p.temporal, p.spatial),
                w.values, p.temporal, p.spatial, cfg.lam,
            )[0].item()
            for w, p in ((w, state_matrices(w)) for w in wins)
        ]))
    res = fit(series, cfg)
    epoch5 = res.result.log[-1].train_loss
    ratio = epoch5 / epoch0
    fixture_ok = (
        abs(epoch0 - FIXTURE_EPOCH0) <= 0.05 * FIXTURE_EPOCH0
        and abs(epoch5 - FIXTURE_EPOCH5) <= 0.10 * FIXTURE_EPOCH5
    )
    criterion(
        6,
        ratio <= 0.5 and len(res.result.log) == 5 and fixture_ok,
        f"loss {epoch0:.0f} -> {epoch5:.0f} after 5 epochs (ratio {ratio:.3f}); "
        f"regression fixture match: {fixture_ok}",
    )


# -- 7: ablation direction check ----------------------------------------------


def _ablation_data(seed):
    durations = (30, 20, 50, 40)
    sensors = ((0, 3), (1, 4), (2, 5), (3, 6))
    train_len, test_len = 10000, 2500
    events = tuple(
        synth.InjectedEvent(start=train_len + 320 + i * 500, duration=dur, sensors=ss, magnitude=6.0)
        for i, (dur, ss) in enumerate(zip(durations, sensors))
    )
    spec = synth.SynthSpec(length=train_len + test_len, seed=seed, events=events)
    series, labels, events = synth.generate(spec)
    test_events = [synth.replace_event(e, -train_len) for e in events]
    return series[:train_len], series[train_len:], labels[train_len:], test_events


def _ablation_f1(seed, variant, tmp_path):
    kwargs = dict(window=100, batch_size=16, lr=1e-3, max_epochs=6, patience=2,
                  seed=seed, beta=2.0)
    if variant == "no_temporal":
        kwargs["temporal_branch"] = False
    elif variant == "no_spatial":
        kwargs["spatial_branch"] = False
    elif variant == "no_align":
        kwargs["lam"] = 0.0
    cfg = TrainConfig(**kwargs)
    train_series, test_series, test_labels, test_events = _ablation_data(seed)
    res = fit(train_series, cfg)
    path = tmp_path / f"{variant}_{seed}.bin"
    save_checkpoint(path, res, cfg, synth.SENSOR_NAMES)
    ckpt = load_checkpoint(path)
    result = run_detect(ckpt, test_series, calibrate_thresholds(ckpt),
                        labels=test_labels, truth_events=test_events)
    return result.metrics["f1"]


def test_criterion_7_ablation_direction(tmp_path):
    seeds = (0, 1, 2)
    f1 = {v: [_ablation_f1(s, v, tmp_path) for s in seeds]
          for v in ("full", "no_temporal", "no_spatial", "no_align")}
    mean = {v: float(np.mean(vals)) for v, vals in f1.items()}
    gaps = {v: mean[v] - mean["full"] for v in ("no_temporal", "no_spatial", "no_align")}
    ok = all(gap <= 0.01 for gap in gaps.values())
    criterion(
        7,
        ok,
        "mean F1 full {full:.4f}; ablation gaps vs full: temporal {no_temporal:+.4f}, "
        "spatial {no_spatial:+.4f}, align {no_align:+.4f} (none may exceed +0.01)".format(
            full=mean["full"], **gaps
        ),
    )


# -- 8: determinism and persistence -------------------------------------------


def _small_pipeline(tmp_path, tag):
    train_series, _, _ = synth.generate(synth.SynthSpec(length=4000, seed=23))
    events = (
        synth.InjectedEvent(start=430, duration=25, sensors=(1, 4), magnitude=6.0),
        synth.InjectedEvent(start=870, duration=45, sensors=(2, 6), magnitude=6.0),
    )
    test_series, test_labels, _ = synth.generate(
        synth.SynthSpec(length=1200, seed=29, events=events)
    )[0:3]
    cfg = TrainConfig(window=100, batch_size=8, lr=1e-3, max_epochs=3, patience=3,
                      seed=3, beta=2.0)
    res = fit(train_series, cfg)
    ckpt_path = tmp_path / f"{tag}_ck.bin"
    save_checkpoint(ckpt_path, res, cfg, synth.SENSOR_NAMES)
    ckpt = load_checkpoint(ckpt_path)
    result = run_detect(ckpt, test_series, calibrate_thresholds(ckpt), labels=test_labels)
    outdir = tmp_path / tag
    report.write_report(outdir, result, synth.SENSOR_NAMES, labels=test_labels, figures=False)
    return ckpt_path, outdir, res, test_series


def test_criterion_8_determinism_and_persistence(tmp_path):
    ck1, out1, res1, test_series = _small_pipeline(tmp_path, "run1")
    ck2, out2, _, _ = _small_pipeline(tmp_path, "run2")
    csv_identical = all(
        (out1 / name).read_bytes() == (out2 / name).read_bytes()
        for name in ("scores.csv", "sensors.csv", "events.csv", "metrics.txt")
    )
    checkpoints_identical = ck1.read_bytes() == ck2.read_bytes()

    ckpt = load_checkpoint(ck1)
    win = TimeWindow(data.apply_norm(test_series[:100], ckpt.stats))
    pair = state_matrices(win)
    before = model.forward(res1.state, win.values, pair.temporal, pair.spatial)
    after = model.forward(ckpt.state, win.values, pair.temporal, pair.spatial)
    round_trip = (
        np.array_equal(before.values_rec.value, after.values_rec.value)
        and np.array_equal(before.temporal_rec.value, after.temporal_rec.value)
        and np.array_equal(before.spatial_rec.value, after.spatial_rec.value)
    )
    criterion(
        8,
        csv_identical and checkpoints_identical and round_trip,
        f"report CSVs bit-identical: {csv_identical}, checkpoints bit-identical: "
        f"{checkpoints_identical}, checkpoint round-trip forward bit-identical: {round_trip}",
    )


# -- 9: optional real-data comparison (non-gating) -----------------------------

TABLE_F1 = {"SMD": 92.00, "PSM": 98.18}


def test_criterion_9_optional_real_data(tmp_path):
    """Non-gating: runs only when STATEDIAG_SMD_DIR / STATEDIAG_PSM_DIR point
    at directories holding train.csv and test.csv (test.csv labeled); reports
    the F1 gap against the published reference values without a threshold."""
    ran_any = False
    for name in ("SMD", "PSM"):
        root = os.environ.get(f"STATEDIAG_{name}_DIR")
        if not root:
            continue
        ran_any = True
        train_path = Path(root) / "train.csv"
        test_path = Path(root) / "test.csv"
        _, train_series, _ = data.load_csv(train_path)
        _, test_series, test_labels = data.load_csv(test_path)
        cfg = TrainConfig(hidden=512, heads=8, blocks=3, rule="ratio",
                          r=0.005 if name == "SMD" else 0.01)
        res = fit(train_series, cfg)
        ckpt_path = tmp_path / f"{name}.bin"
        save_checkpoint(ckpt_path, res, cfg, [f"s{i}" for i in range(train_series.shape[1])])
        ckpt = load_checkpoint(ckpt_path)
        result = run_detect(ckpt, test_series, calibrate_thresholds(ckpt), labels=test_labels)
        f1 = 100.0 * result.metrics["f1"]
        print(
            f"[criterion 9] INFO: {name} F1 {f1:.2f} vs reference {TABLE_F1[name]:.2f} "
            f"(gap {f1 - TABLE_F1[name]:+.2f}; non-gating)",
            flush=True,
        )
    if not ran_any:
        print("[criterion 9] SKIP: no real-data directories supplied (non-gating)", flush=True)
        pytest.skip("set STATEDIAG_SMD_DIR / STATEDIAG_PSM_DIR to run the comparison")
