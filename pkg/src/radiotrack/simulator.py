"""Synthetic ground truth and Monte-Carlo moment oracles."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._linalg import psd_sqrt
from .errors import DataError
from .measurement import (Calibration, Detection, nearest_antenna, power_to_display,
                          received_power)
from .movement import PX, PY, PZ, MovementParams, as_state, sample_transition


@dataclass(frozen=True, eq=False)
class SimScenario:
    """Everything needed to generate a reproducible synthetic track.

    ``init_state`` is the true state at ``detection_times[0]``. With
    ``measurement_noise=False`` the noise draw in the received power is
    fixed at zero.
    """

    params: MovementParams
    init_state: np.ndarray
    detection_times: np.ndarray
    towers: tuple
    cal: Calibration = field(default_factory=Calibration)
    seed: int = 0
    measurement_noise: bool = True

    def __post_init__(self):
        times = np.asarray(self.detection_times, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("detection_times must be a non-empty 1-D sequence")
        if np.any(np.diff(times) <= 0):
            raise ValueError("detection_times must be strictly increasing")
        if not self.towers:
            raise ValueError("at least one antenna is required")
        object.__setattr__(self, "detection_times", times)
        object.__setattr__(self, "init_state", as_state(self.init_state))
        object.__setattr__(self, "towers", tuple(self.towers))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    times: np.ndarray
    states: np.ndarray
    detections: list

    @property
    def saturated_fraction(self):
        if not self.detections:
            return 0.0
        return sum(d.Z >= 255 for d in self.detections) / len(self.detections)


def uniform_times(n, dt, t0=0.0, jitter=0.0, rng=None):
    """``n`` detection times spaced ``dt`` apart, optionally jittered.

    Jitter is uniform in ``[-jitter, jitter]`` and must stay below ``dt/2``
    so the times remain increasing.
    """
    times = t0 + dt * np.arange(n, dtype=float)
    if jitter:
        if not 0 <= jitter < dt / 2:
            raise ValueError("jitter must be in [0, dt/2)")
        rng = rng if rng is not None else np.random.default_rng()
        times[1:] += rng.uniform(-jitter, jitter, size=n - 1)
    return times


def simulate(scenario: SimScenario) -> GroundTruth:
    """Sample a trajectory and the detections it produces.

    Each record is assigned to the nearest antenna (ties to the lowest id);
    the display number is the received power mapped through the display
    link, rounded half-up and clipped to ``[Zm, ZM]``.
    """
    rng = np.random.default_rng(scenario.seed)
    cal = scenario.cal
    times = scenario.detection_times
    n = times.size
    states = np.empty((n, 5))
    states[0] = scenario.init_state
    detections = []
    for k in range(n):
        if k > 0:
            states[k] = sample_transition(states[k - 1], scenario.params, times[k] - times[k - 1], rng)
        gamma = rng.standard_normal() if scenario.measurement_noise else 0.0
        pos = states[k, [PX, PY, PZ]]
        ant = nearest_antenna(pos, scenario.towers)
        Y = received_power(states[k], gamma, ant, cal)
        Z = math.floor(power_to_display(Y, cal) + 0.5)
        Z = int(min(max(Z, cal.Zm), cal.ZM))
        detections.append(Detection(float(times[k]), ant.id, Z))
    return GroundTruth(times.copy(), states, detections)


def monte_carlo_power_moments(state_mean, state_cov, antenna, cal=Calibration(), samples=10_000,
                              seed=0, noise=True):
    """Sample mean and variance of received power under a Gaussian state.

    States are drawn from ``N(state_mean, state_cov)`` and, unless
    ``noise`` is false, the power noise from ``N(0, 1)``.
    """
    if samples < 1000:
        raise ValueError("at least 1000 samples are required")
    rng = np.random.default_rng(seed)
    S = psd_sqrt(state_cov)
    draws = as_state(state_mean) + rng.standard_normal((samples, 5)) @ S.T
    gamma = rng.standard_normal(samples) if noise else np.zeros(samples)
    h = received_power(draws, gamma, antenna, cal)
    return float(np.mean(h)), float(np.var(h))


def _means(track):
    if isinstance(track, np.ndarray):
        return track
    if hasattr(track, "means"):
        return np.asarray(track.means)
    return np.array([b.mean for b in track])


def evaluate_track(truth, track):
    """Sum of squared horizontal position errors between truth and estimate."""
    true_states = np.asarray(truth.states if hasattr(truth, "states") else truth, dtype=float)
    est = _means(track)
    if true_states.shape[0] != est.shape[0]:
        raise DataError(f"track has {est.shape[0]} points but truth has {true_states.shape[0]}")
    if true_states.shape[0] == 0:
        return 0.0
    d = est[:, [PX, PY]] - true_states[:, [PX, PY]]
    return float(np.sum(d * d))
