"""Synthetic generator: determinism, labeling, and injection contracts."""

import numpy as np
import pytest

from statediag import synth
from statediag.errors import InputError


def test_zero_injections_all_labels_clear():
    spec = synth.SynthSpec(length=1500, seed=1)
    series, labels, events = synth.generate(spec)
    assert series.shape == (1500, 7)
    assert not labels.any()
    assert events == []
    assert np.isfinite(series).all()


def test_same_seed_identical_series():
    spec = synth.SynthSpec(length=1200, seed=5)
    a, _, _ = synth.generate(spec)
    b, _, _ = synth.generate(spec)
    assert np.array_equal(a, b)


def test_different_seed_differs():
    a, _, _ = synth.generate(synth.SynthSpec(length=800, seed=1))
    b, _, _ = synth.generate(synth.SynthSpec(length=800, seed=2))
    assert not np.array_equal(a, b)


def test_case_study_spec_has_six_events_with_expected_durations():
    spec = synth.case_study_spec(seed=7)
    series, labels, events = synth.generate(spec)
    durations = sorted(e.end - e.start for e in events)
    assert durations == [10, 20, 30, 40, 50, 60]
    assert len(events) == 6
    assert all(len(e.sensors) == 2 for e in events)
    assert labels.sum() == 210


def test_case_study_split_keeps_training_clean():
    spec = synth.case_study_spec(seed=7)
    series, labels, events = synth.generate(spec)
    train, test, test_labels, test_events = synth.split_case_study(spec, series, labels, events)
    assert train.shape[0] == synth.CASE_STUDY_TRAIN_LEN
    assert test.shape[0] == synth.CASE_STUDY_TEST_LEN
    assert len(test_events) == 6
    for ev in test_events:
        assert 0 <= ev.start < ev.end <= synth.CASE_STUDY_TEST_LEN
        assert test_labels[ev.start : ev.end].all()


def test_offsets_shift_affected_sensors_only():
    ev = synth.InjectedEvent(start=500, duration=40, sensors=(2, 5), magnitude=8.0)
    spec = synth.SynthSpec(length=1000, seed=3, events=(ev,))
    clean, _, _ = synth.generate(synth.SynthSpec(length=1000, seed=3))
    dirty, labels, _ = synth.generate(spec)
    delta = np.abs(dirty - clean).max(axis=0)
    assert delta[2] > 1.0 and delta[5] > 0.5
    untouched = [i for i in range(7) if i not in (2, 5)]
    assert np.array_equal(dirty[:, untouched], clean[:, untouched])
    assert labels[500:540].all() and labels.sum() == 40


def test_stuck_fault_freezes_sensor():
    ev = synth.InjectedEvent(start=300, duration=30, sensors=(0,), kind="stuck")
    series, _, _ = synth.generate(synth.SynthSpec(length=600, seed=4, events=(ev,)))
    assert np.ptp(series[300:330, 0]) == 0.0


def test_overlapping_injections_rejected():
    events = (
        synth.InjectedEvent(start=100, duration=50, sensors=(0,)),
        synth.InjectedEvent(start=120, duration=10, sensors=(1,)),
    )
    with pytest.raises(InputError, match="overlap"):
        synth.SynthSpec(length=500, seed=0, events=events)


def test_out_of_bounds_injection_rejected():
    with pytest.raises(InputError):
        synth.SynthSpec(length=100, seed=0,
                        events=(synth.InjectedEvent(start=90, duration=20, sensors=(0,)),))


def test_bad_sensor_index_rejected():
    with pytest.raises(InputError):
        synth.SynthSpec(length=100, seed=0,
                        events=(synth.InjectedEvent(start=10, duration=5, sensors=(9,)),))
