"""Temporal and spatial state matrices for a normalized window.

For a window of ``w`` timesteps over ``n`` sensors, the temporal state
matrix is the ``w x w`` grid of scaled dot products between timestep
vectors, and the spatial state matrix is the ``n x n`` grid of scaled
dot products between sensor series. Each divides by a positive
temperature; the defaults (``n`` for temporal, ``w`` for spatial) keep
entries O(1) on z-scored input regardless of window geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ParameterError

__all__ = [
    "TimeWindow",
    "StateMatrixPair",
    "temporal_state_matrix",
    "spatial_state_matrix",
    "state_matrices",
]


@dataclass
class TimeWindow:
    """One w x n slice of a normalized multivariate series."""

    values: np.ndarray
    start_index: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise InputError(f"TimeWindow values must be 2-D, got ndim={self.values.ndim}")
        w, n = self.values.shape
        if w <= 1 or n <= 1:
            raise InputError(f"TimeWindow needs w > 1 and n > 1, got {w}x{n}")
        if not np.isfinite(self.values).all():
            raise InputError("TimeWindow values must be finite")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def sensors(self) -> int:
        return self.values.shape[1]


@dataclass
class StateMatrixPair:
    """The temporal (w x w) and spatial (n x n) state matrices of a window."""

    temporal: np.ndarray
    spatial: np.ndarray
    tau_t: float
    tau_s: float


def _symmetrize(m: np.ndarray) -> np.ndarray:
    # float addition is commutative, so (m + m.T) / 2 is bitwise symmetric
    return (m + m.T) * 0.5


def temporal_state_matrix(win: TimeWindow, tau_t: float) -> np.ndarray:
    """Entry (i, j) is the dot product of timestep rows i and j over tau_t."""
    if not tau_t > 0:
        raise ParameterError(f"tau_t must be positive, got {tau_t}")
    x = win.values
    return _symmetrize(x @ x.T) / tau_t


def spatial_state_matrix(win: TimeWindow, tau_s: float) -> np.ndarray:
    """Entry (i, j) is the dot product of sensor columns i and j over tau_s."""
    if not tau_s > 0:
        raise ParameterError(f"tau_s must be positive, got {tau_s}")
    x = win.values
    return _symmetrize(x.T @ x) / tau_s


def state_matrices(
    win: TimeWindow, tau_t: float | None = None, tau_s: float | None = None
) -> StateMatrixPair:
    """Build both matrices; tau defaults are sensor count / window length."""
    tt = float(win.sensors) if tau_t is None else float(tau_t)
    ts = float(win.length) if tau_s is None else float(tau_s)
    return StateMatrixPair(
        temporal=temporal_state_matrix(win, tt),
        spatial=spatial_state_matrix(win, ts),
        tau_t=tt,
        tau_s=ts,
    )
