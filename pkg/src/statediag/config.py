"""Flat key=value configuration files and the typed run configuration.

Config files hold one ``key = value`` pair per line; ``#`` starts a
comment. Keys are dotted (``model.hidden``, ``train.lr``,
``synth.event.0``). Command-line flags override file values, which
override the defaults below. The key reference lives in the README.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError, ParseError
from .model import ModelConfig
from .synth import InjectedEvent, SynthSpec

__all__ = ["TrainConfig", "read_kv_file", "train_config_from", "synth_spec_from"]


@dataclass
class TrainConfig:
    """Training, model-shape, and threshold settings with their defaults."""

    window: int = 100
    batch_size: int = 64
    lr: float = 1e-4
    max_epochs: int = 10
    patience: int = 3
    lam: float = 19.0
    seed: int = 0
    valid_fraction: float = 0.2
    dtype: str = "f32"
    # model shape (hidden/heads/blocks default to the desk-scale profile)
    hidden: int = 64
    heads: int = 4
    blocks: int = 2
    ff_mult: int = 2
    eps_ln: float = 1e-5
    temporal_branch: bool = True
    spatial_branch: bool = True
    # state-matrix temperatures; None means n and w respectively
    tau_t: float | None = None
    tau_s: float | None = None
    # thresholding
    rule: str = "betamax"
    r: float = 0.01
    beta: float = 1.5
    rel_temporal: float = 0.25
    rel_point: float = 0.1

    def model_config(self, sensors: int) -> ModelConfig:
        return ModelConfig(
            window=self.window,
            sensors=sensors,
            hidden=self.hidden,
            heads=self.heads,
            blocks=self.blocks,
            ff_mult=self.ff_mult,
            eps_ln=self.eps_ln,
            dtype=self.dtype,
            temporal_branch=self.temporal_branch,
            spatial_branch=self.spatial_branch,
        )


def read_kv_file(path) -> dict[str, str]:
    """Parse a flat key=value file; errors name the offending line."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"{path}: line {lineno}: expected key = value")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def _parse_bool(key: str, value: str) -> bool:
    v = value.lower()
    if v in ("true", "1", "yes", "on"):
        return True
    if v in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def _parse_num(key: str, value: str, cast):
    try:
        return cast(value)
    except ValueError:
        raise ConfigError(f"{key}: expected {cast.__name__}, got {value!r}") from None


_TRAIN_KEYS = {
    "train.window": ("window", int),
    "train.batch_size": ("batch_size", int),
    "train.lr": ("lr", float),
    "train.max_epochs": ("max_epochs", int),
    "train.patience": ("patience", int),
    "train.lambda": ("lam", float),
    "train.seed": ("seed", int),
    "train.valid_fraction": ("valid_fraction", float),
    "model.dtype": ("dtype", str),
    "model.hidden": ("hidden", int),
    "model.heads": ("heads", int),
    "model.blocks": ("blocks", int),
    "model.ff_mult": ("ff_mult", int),
    "model.eps_ln": ("eps_ln", float),
    "model.temporal_branch": ("temporal_branch", bool),
    "model.spatial_branch": ("spatial_branch", bool),
    "state.tau_t": ("tau_t", float),
    "state.tau_s": ("tau_s", float),
    "threshold.rule": ("rule", str),
    "threshold.r": ("r", float),
    "threshold.beta": ("beta", float),
    "threshold.rel_temporal": ("rel_temporal", float),
    "threshold.rel_point": ("rel_point", float),
}


def train_config_from(kv: dict[str, str], overrides: dict | None = None) -> TrainConfig:
    """Build a TrainConfig from file values plus programmatic overrides."""
    cfg = TrainConfig()
    for key, value in kv.items():
        if key.startswith("synth."):
            continue
        if key not in _TRAIN_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        attr, cast = _TRAIN_KEYS[key]
        if cast is bool:
            setattr(cfg, attr, _parse_bool(key, value))
        elif cast is str:
            setattr(cfg, attr, value)
        elif value.lower() == "auto" and attr in ("tau_t", "tau_s"):
            setattr(cfg, attr, None)
        else:
            setattr(cfg, attr, _parse_num(key, value, cast))
    for attr, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, attr, value)
    if cfg.rule not in ("ratio", "betamax"):
        raise ConfigError(f"threshold.rule must be ratio or betamax, got {cfg.rule!r}")
    if cfg.dtype not in ("f32", "f64"):
        raise ConfigError(f"model.dtype must be f32 or f64, got {cfg.dtype!r}")
    return cfg


def synth_spec_from(kv: dict[str, str], seed: int | None = None) -> SynthSpec:
    """Build a SynthSpec from ``synth.*`` keys.

    Events use ``synth.event.N = start duration sensor[,sensor...] magnitude [kind]``.
    """
    fields: dict = {}
    events: dict[int, InjectedEvent] = {}
    scalar_keys = {
        "synth.sensors": ("sensors", int),
        "synth.length": ("length", int),
        "synth.noise_sigma": ("noise_sigma", float),
        "synth.seed": ("seed", int),
        "synth.tank_area": ("tank_area", float),
        "synth.coupling": ("coupling", float),
        "synth.outlet": ("outlet", float),
        "synth.pump_gain": ("pump_gain", float),
        "synth.cycle_period": ("cycle_period", float),
        "synth.season_period": ("season_period", float),
        "synth.burn_in": ("burn_in", int),
    }
    for key, value in kv.items():
        if not key.startswith("synth."):
            continue
        if key in scalar_keys:
            attr, cast = scalar_keys[key]
            fields[attr] = _parse_num(key, value, cast)
        elif key.startswith("synth.event."):
            idx = _parse_num(key, key.rsplit(".", 1)[1], int)
            parts = value.split()
            if len(parts) not in (4, 5):
                raise ConfigError(
                    f"{key}: expected 'start duration sensors magnitude [kind]', got {value!r}"
                )
            sensors = tuple(int(s) for s in parts[2].split(","))
            events[idx] = InjectedEvent(
                start=int(parts[0]),
                duration=int(parts[1]),
                sensors=sensors,
                magnitude=float(parts[3]),
                kind=parts[4] if len(parts) == 5 else "offset",
            )
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if seed is not None:
        fields["seed"] = seed
    fields["events"] = tuple(events[i] for i in sorted(events))
    return SynthSpec(**fields)
