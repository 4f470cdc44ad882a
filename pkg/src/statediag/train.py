"""Training loop: batched window reconstruction with early stopping.

Each window carries its own tape; gradients from the windows of a batch
merge by summation into the shared parameter buffers, are rescaled to a
mean, and one Adam step follows. Validation loss is tracked per epoch
and the best-validation parameters are returned. A checkpoint bundles
the parameters, optimizer moments, normalization statistics, and the
validation score streams the detector calibrates thresholds from.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import data, diagnosis, losses, model, ndgrad as ng
from .config import TrainConfig
from .container import load_container, save_container
from .errors import ConfigError, InputError, NumericError
from .statemat import StateMatrixPair, TimeWindow, state_matrices

__all__ = ["EpochStats", "TrainResult", "train", "fit", "save_checkpoint", "load_checkpoint"]

log = logging.getLogger(__name__)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    valid_loss: float
    seconds: float


@dataclass
class TrainResult:
    state: model.ModelState
    log: list[EpochStats]
    best_valid: float
    adam: ng.Adam
    stopped_early: bool


def _window_pairs(windows: list[TimeWindow], cfg: TrainConfig) -> list[StateMatrixPair]:
    return [state_matrices(w, cfg.tau_t, cfg.tau_s) for w in windows]


def _raise_non_finite(state: model.ModelState, win: TimeWindow, pair: StateMatrixPair, lam: float):
    """Re-run the forward with tracing and name the first non-finite tensor."""
    trace: dict = {}
    loss_repr = "unavailable"
    try:
        out = model.forward(state, win.values, pair.temporal, pair.spatial, trace=trace)
        total, _ = losses.total_loss(out, win.values, pair.temporal, pair.spatial, lam)
        loss_repr = repr(total.item())
    except NumericError:
        pass  # a domain check fired mid-forward; the partial trace locates it
    for name, value in trace.items():
        if not np.isfinite(value).all():
            raise NumericError(f"non-finite values first appeared in {name!r}")
    raise NumericError(f"non-finite loss {loss_repr} with finite recorded intermediates")


def _window_loss(state, win, pair, lam):
    out = model.forward(state, win.values, pair.temporal, pair.spatial)
    total, _ = losses.total_loss(out, win.values, pair.temporal, pair.spatial, lam)
    return total


def train(
    train_windows: list[TimeWindow],
    valid_windows: list[TimeWindow],
    cfg: TrainConfig,
    resume: tuple[model.ModelState, ng.Adam] | None = None,
) -> TrainResult:
    """Run up to ``cfg.max_epochs`` epochs with early stopping.

    Stops once validation loss has failed to improve for ``cfg.patience``
    consecutive epochs (patience 0 therefore trains exactly one epoch).
    """
    if not train_windows or not valid_windows:
        raise InputError("train: both window sets must be nonempty")
    if resume is not None:
        state, adam = resume
    else:
        mc = cfg.model_config(train_windows[0].sensors)
        state = model.init_state(mc, seed=cfg.seed)
        adam = ng.Adam(state.param_list(), lr=cfg.lr)
    params = state.param_list()
    train_pairs = _window_pairs(train_windows, cfg)
    valid_pairs = _window_pairs(valid_windows, cfg)
    rng = np.random.default_rng(cfg.seed + 1)

    best_valid = float("inf")
    best_snapshot = state.values_snapshot()
    stats: list[EpochStats] = []
    since_improve = 0
    stopped_early = False
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.time()
        order = rng.permutation(len(train_windows))
        epoch_losses = []
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo : lo + cfg.batch_size]
            adam.zero_grad()
            for idx in batch:
                win, pair = train_windows[idx], train_pairs[idx]
                try:
                    total = _window_loss(state, win, pair, cfg.lam)
                    value = total.item()
                except NumericError:
                    _raise_non_finite(state, win, pair, cfg.lam)
                if not np.isfinite(value):
                    _raise_non_finite(state, win, pair, cfg.lam)
                epoch_losses.append(value)
                ng.backward(total)
            inv = 1.0 / len(batch)
            for p in params:
                if p.grad is None:
                    p.grad = np.zeros_like(p.value)
                p.grad *= inv
            adam.step()
        with ng.no_grad():
            valid_losses = [
                _window_loss(state, w, p, cfg.lam).item()
                for w, p in zip(valid_windows, valid_pairs)
            ]
        train_loss = float(np.mean(epoch_losses))
        valid_loss = float(np.mean(valid_losses))
        stats.append(EpochStats(epoch, train_loss, valid_loss, time.time() - t0))
        log.info(
            "epoch %d: train %.4f valid %.4f (%.1fs)", epoch, train_loss, valid_loss, stats[-1].seconds
        )
        if valid_loss < best_valid:
            best_valid = valid_loss
            best_snapshot = state.values_snapshot()
            since_improve = 0
        else:
            since_improve += 1
        if since_improve >= cfg.patience:
            stopped_early = epoch < cfg.max_epochs
            break
    state.load_values(best_snapshot)
    return TrainResult(state=state, log=stats, best_valid=best_valid, adam=adam,
                       stopped_early=stopped_early)


def _validation_streams(
    state: model.ModelState, valid_windows: list[TimeWindow], cfg: TrainConfig
) -> dict[str, np.ndarray]:
    """Score streams over clean validation windows, for threshold calibration."""
    point, sensor_rows, temporal_rows = [], [], []
    with ng.no_grad():
        for win in valid_windows:
            pair = state_matrices(win, cfg.tau_t, cfg.tau_s)
            out = model.forward(state, win.values, pair.temporal, pair.spatial)
            point.append(diagnosis.anomaly_score(win.values, out))
            if out.spatial_rec is not None:
                scores, _ = diagnosis.localize(pair.spatial, out.spatial_rec, out.maps)
                sensor_rows.append(scores)
            if out.temporal_rec is not None:
                _, rows, _ = diagnosis.severity(pair.temporal, out.temporal_rec, out.maps, np.inf)
                temporal_rows.append(rows)
    streams = {"valid/point_scores": np.concatenate(point).reshape(1, -1)}
    if sensor_rows:
        streams["valid/sensor_row_scores"] = np.concatenate(sensor_rows).reshape(1, -1)
    if temporal_rows:
        streams["valid/temporal_row_scores"] = np.concatenate(temporal_rows).reshape(1, -1)
    return streams


@dataclass
class FitResult:
    state: model.ModelState
    stats: data.NormStats
    result: TrainResult
    streams: dict[str, np.ndarray] = field(default_factory=dict)


def fit(series: np.ndarray, cfg: TrainConfig, labels: np.ndarray | None = None) -> FitResult:
    """Normalize, split, window, train, and score validation streams."""
    series = data.drop_labeled_anomalies(series, labels)
    train_part, valid_part = data.split_train_valid(series, cfg.valid_fraction)
    stats = data.fit_norm_stats(train_part)
    train_windows = data.make_windows(data.apply_norm(train_part, stats), cfg.window)
    valid_windows = data.make_windows(
        data.apply_norm(valid_part, stats), cfg.window, start_offset=train_part.shape[0]
    )
    result = train(train_windows, valid_windows, cfg)
    streams = _validation_streams(result.state, valid_windows, cfg)
    return FitResult(state=result.state, stats=stats, result=result, streams=streams)


def save_checkpoint(path, fit_result: FitResult, cfg: TrainConfig, sensor_names: list[str]) -> None:
    """Persist parameters, Adam moments, norm stats, and validation streams."""
    state = fit_result.state
    tensors: dict[str, np.ndarray] = {f"param/{k}": v.value for k, v in state.params.items()}
    tensors["norm/mean"] = fit_result.stats.mean.reshape(1, -1)
    tensors["norm/std"] = fit_result.stats.std.reshape(1, -1)
    tensors.update(fit_result.streams)
    adam = fit_result.result.adam
    for i, p in enumerate(state.param_list()):
        tensors[f"adam/m/{p.name}"] = adam.m[i]
        tensors[f"adam/v/{p.name}"] = adam.v[i]
    meta = {
        "kind": "checkpoint",
        "model_config": state.config.to_dict(),
        "sensor_names": list(sensor_names),
        "adam_t": adam.t,
        "train": {
            "window": cfg.window,
            "lr": cfg.lr,
            "lam": cfg.lam,
            "seed": cfg.seed,
            "tau_t": cfg.tau_t,
            "tau_s": cfg.tau_s,
            "rule": cfg.rule,
            "r": cfg.r,
            "beta": cfg.beta,
            "rel_temporal": cfg.rel_temporal,
            "rel_point": cfg.rel_point,
        },
    }
    save_container(path, tensors, meta)


@dataclass
class Checkpoint:
    state: model.ModelState
    stats: data.NormStats
    sensor_names: list[str]
    meta: dict
    streams: dict[str, np.ndarray]
    adam_moments: dict[str, np.ndarray]
    adam_t: int


def load_checkpoint(path) -> Checkpoint:
    tensors, meta = load_container(path)
    if meta.get("kind") != "checkpoint":
        raise ConfigError(f"{path}: container is not a checkpoint")
    mc = model.ModelConfig.from_dict(meta["model_config"])
    state = model.init_state(mc, seed=0)
    for key, p in state.params.items():
        src = tensors.get(f"param/{key}")
        if src is None:
            raise ConfigError(f"{path}: checkpoint is missing parameter {key!r}")
        state.params[key].value = np.ascontiguousarray(src.astype(p.value.dtype, copy=True))
    stats = data.NormStats(mean=tensors["norm/mean"].ravel(), std=tensors["norm/std"].ravel())
    streams = {k: v for k, v in tensors.items() if k.startswith("valid/")}
    adam_moments = {k: v for k, v in tensors.items() if k.startswith("adam/")}
    return Checkpoint(
        state=state,
        stats=stats,
        sensor_names=list(meta.get("sensor_names", [])),
        meta=meta,
        streams=streams,
        adam_moments=adam_moments,
        adam_t=int(meta.get("adam_t", 0)),
    )


def resume_optimizer(ckpt: Checkpoint, lr: float) -> ng.Adam:
    """Rebuild an Adam whose step counter continues from the checkpoint."""
    adam = ng.Adam(ckpt.state.param_list(), lr=lr)
    for i, p in enumerate(ckpt.state.param_list()):
        m = ckpt.adam_moments.get(f"adam/m/{p.name}")
        v = ckpt.adam_moments.get(f"adam/v/{p.name}")
        if m is not None and v is not None:
            adam.m[i] = m.astype(p.value.dtype, copy=True)
            adam.v[i] = v.astype(p.value.dtype, copy=True)
    adam.t = ckpt.adam_t
    return adam
