"""Synthetic coupled-tank process data with injected anomalies.

A deterministic two-tank mass-balance recurrence drives seven sensor
channels: two levels, pump inflow, coupling flow, outlet flow, the pump
duty command, and a pressure proxy. The pump duty follows a fast
actuation cycle plus a slow seasonal term; every channel gets additive
Gaussian noise. Anomalies are injected after simulation as per-sensor
offsets (in units of that channel's clean standard deviation) or
stuck-at-value faults, with per-event ground-truth sensor sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError

__all__ = [
    "SENSOR_NAMES",
    "InjectedEvent",
    "SynthSpec",
    "GroundTruthEvent",
    "generate",
    "case_study_spec",
    "CASE_STUDY_TRAIN_LEN",
    "CASE_STUDY_TEST_LEN",
]

SENSOR_NAMES = ["level_1", "level_2", "inflow", "coupling_flow", "outflow", "pump_duty", "pressure"]

CASE_STUDY_TRAIN_LEN = 30_000
CASE_STUDY_TEST_LEN = 5_000


@dataclass(frozen=True)
class InjectedEvent:
    start: int
    duration: int
    sensors: tuple[int, ...]
    magnitude: float = 6.0
    kind: str = "offset"  # "offset" or "stuck"

    @property
    def end(self) -> int:
        return self.start + self.duration


@dataclass
class SynthSpec:
    sensors: int = 7
    length: int = CASE_STUDY_TRAIN_LEN
    noise_sigma: float = 0.02
    seed: int = 0
    events: tuple[InjectedEvent, ...] = ()
    # process constants
    tank_area: float = 20.0
    coupling: float = 0.35
    outlet: float = 0.25
    pump_gain: float = 1.2
    cycle_period: float = 480.0
    season_period: float = 3750.0
    burn_in: int = 500

    def __post_init__(self):
        if self.sensors != len(SENSOR_NAMES):
            raise InputError(f"generator produces {len(SENSOR_NAMES)} sensors, got {self.sensors}")
        ordered = sorted(self.events, key=lambda e: e.start)
        prev_end = -1
        for ev in ordered:
            if ev.duration < 1:
                raise InputError(f"event at {ev.start}: duration must be >= 1")
            if ev.start < 0 or ev.end > self.length:
                raise InputError(f"event ({ev.start}, {ev.end}) out of series bounds")
            if ev.start < prev_end:
                raise InputError(f"injected events overlap at {ev.start}")
            if any(s < 0 or s >= self.sensors for s in ev.sensors):
                raise InputError(f"event at {ev.start}: sensor index out of range")
            if ev.kind not in ("offset", "stuck"):
                raise InputError(f"event at {ev.start}: unknown kind {ev.kind!r}")
            prev_end = ev.end


@dataclass
class GroundTruthEvent:
    start: int
    end: int
    sensors: tuple[int, ...]


def _simulate_clean(spec: SynthSpec) -> np.ndarray:
    rng = np.random.default_rng(spec.seed)
    total = spec.length + spec.burn_in
    t = np.arange(total, dtype=np.float64)
    duty = (
        0.55
        + 0.30 * np.sin(2.0 * math.pi * t / spec.cycle_period)
        + 0.08 * np.sin(2.0 * math.pi * t / spec.season_period)
    )
    h1 = np.empty(total)
    h2 = np.empty(total)
    q_in = spec.pump_gain * duty
    lvl1, lvl2 = 4.0, 2.5
    inv_area = 1.0 / spec.tank_area
    for i in range(total):
        q12 = spec.coupling * (lvl1 - lvl2)
        q_out = spec.outlet * lvl2
        lvl1 += (q_in[i] - q12) * inv_area
        lvl2 += (q12 - q_out) * inv_area
        h1[i] = lvl1
        h2[i] = lvl2
    q12_series = spec.coupling * (h1 - h2)
    q_out_series = spec.outlet * h2
    pressure = 0.6 * h2 + 0.4 * h1
    channels = np.stack([h1, h2, q_in, q12_series, q_out_series, duty, pressure], axis=1)
    channels = channels[spec.burn_in :]
    noise = rng.normal(0.0, spec.noise_sigma, size=channels.shape)
    return channels + noise


def generate(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray, list[GroundTruthEvent]]:
    """Produce (series, labels, events); deterministic for a given spec."""
    series = _simulate_clean(spec)
    stds = series.std(axis=0)
    labels = np.zeros(spec.length, dtype=np.int64)
    events: list[GroundTruthEvent] = []
    for ev in sorted(spec.events, key=lambda e: e.start):
        for s in ev.sensors:
            if ev.kind == "offset":
                series[ev.start : ev.end, s] += ev.magnitude * stds[s]
            else:  # stuck at the value observed when the fault begins
                series[ev.start : ev.end, s] = series[ev.start, s]
        labels[ev.start : ev.end] = 1
        events.append(GroundTruthEvent(start=ev.start, end=ev.end, sensors=tuple(ev.sensors)))
    return series, labels, events


# duration order is shuffled in time so severity ranking is not chronological
_CASE_STUDY_DURATIONS = (30, 10, 50, 20, 60, 40)
_CASE_STUDY_SENSORS = ((0, 3), (1, 4), (2, 5), (3, 6), (4, 0), (5, 1))


def case_study_spec(seed: int = 7, magnitude: float = 6.0) -> SynthSpec:
    """Clean 30k-step training span followed by a 5k-step test span with
    six injected events of durations 10..60, two affected sensors each."""
    events = []
    for i, (dur, sensors) in enumerate(zip(_CASE_STUDY_DURATIONS, _CASE_STUDY_SENSORS)):
        start = CASE_STUDY_TRAIN_LEN + 520 + i * 700
        events.append(InjectedEvent(start=start, duration=dur, sensors=sensors, magnitude=magnitude))
    return SynthSpec(
        length=CASE_STUDY_TRAIN_LEN + CASE_STUDY_TEST_LEN,
        seed=seed,
        events=tuple(events),
    )


def split_case_study(
    spec: SynthSpec, series: np.ndarray, labels: np.ndarray, events: list[GroundTruthEvent]
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[GroundTruthEvent]]:
    """Split a case-study series into (train, test, test labels, test events).

    Training rows must be clean; event indices are shifted to the test
    timeline.
    """
    cut = spec.length - CASE_STUDY_TEST_LEN
    if labels[:cut].any():
        raise InputError("case-study training span contains injected events")
    test_events = [
        replace_event(ev, -cut) for ev in events if ev.start >= cut
    ]
    return series[:cut], series[cut:], labels[cut:], test_events


def replace_event(ev: GroundTruthEvent, shift: int) -> GroundTruthEvent:
    return GroundTruthEvent(start=ev.start + shift, end=ev.end + shift, sensors=ev.sensors)
