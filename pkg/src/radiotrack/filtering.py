"""Unscented and extended Kalman filtering of received-power observations.

Both filters share the linear prediction through the movement model and
differ in how the mean, variance and state cross-covariance of the received
power are approximated. The state is augmented with the unit-variance noise
draw ``gamma`` so that the power nonlinearity in the noise is captured too.

The unscented variant uses ``2n`` symmetric sigma points with equal weights
``1/(2n)`` and no centre point; the extended variant linearizes around the
predicted mean with a central-difference Jacobian.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._linalg import repair_psd, robust_cholesky, symmetrize
from .errors import DataError, NumericalError
from .measurement import (AntennaConfig, Calibration, CosineLobePattern, Detection,
                          PowerObservation, display_to_power, is_saturated,
                          received_power)
from .movement import STATE_DIM, MovementParams, TransitionModel

log = logging.getLogger(__name__)

AUG_DIM = STATE_DIM + 1
KINDS = ("ukf", "ekf")

# Predicted power variance is floored at F_FLOOR_SCALE * P0**2.
F_FLOOR_SCALE = 1e-4
# Central-difference step for the EKF Jacobian, relative to max(1, |x_i|).
JACOBIAN_REL_STEP = 1e-6

DEFAULT_INIT_OFFSET = 100.0
DEFAULT_INIT_HEIGHT = 30.0
DEFAULT_INIT_VAR = (1e6, 25.0, 1e6, 25.0, 25.0)


@dataclass(frozen=True, eq=False)
class FilterBelief:
    """Gaussian belief over the 5-dimensional state at time ``t``."""

    mean: np.ndarray
    cov: np.ndarray
    t: float


@dataclass(frozen=True)
class StepDiagnostics:
    """Per-step measurement statistics.

    ``Ybar`` and ``F`` are the predicted power mean and (floored) variance,
    ``v`` the power-domain innovation. ``skipped`` marks saturated records
    that were not applied; ``repaired`` marks a posterior covariance that
    needed eigenvalue flooring.
    """

    Ybar: float
    F: float
    v: float
    gain_norm: float
    saturated: bool = False
    repaired: bool = False
    skipped: bool = False


def augment(mean, cov):
    """Append the noise draw (mean 0, variance 1) to a state belief."""
    n = mean.shape[0]
    m = np.zeros(n + 1)
    m[:n] = mean
    P = np.zeros((n + 1, n + 1))
    P[:n, :n] = cov
    P[n, n] = 1.0
    return m, P


def sigma_points(mean, cov):
    """Return the ``2n`` points ``mean +/- rows of sqrt(n * cov)``.

    The square root is the transposed lower Cholesky factor, so the equally
    weighted points reproduce ``mean`` and ``cov`` exactly.
    """
    mean = np.asarray(mean, dtype=float)
    n = mean.shape[0]
    S = robust_cholesky(n * np.asarray(cov, dtype=float)).T
    return np.concatenate([mean + S, mean - S])


def ut_moments(points, h: Callable):
    """Equal-weight moments of ``h`` over a sigma-point set.

    Returns ``(Ybar, F, Pxy)``: the mean and variance of ``h(points)`` and
    the cross-covariance between the point deviations and the values.
    """
    points = np.asarray(points, dtype=float)
    values = np.asarray(h(points), dtype=float).reshape(points.shape[0])
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NumericalError(f"measurement function not finite at sigma point {bad[0]}: {points[bad[0]]}")
    Ybar = values.mean()
    dh = values - Ybar
    dx = points - points.mean(axis=0)
    F = np.mean(dh * dh)
    Pxy = dx.T @ dh / points.shape[0]
    return Ybar, F, Pxy


def linearized_moments(mean, cov, h: Callable, rel_step=JACOBIAN_REL_STEP):
    """First-order moments ``h(mean)``, ``J cov J'`` and ``cov J'``.

    ``J`` is a central-difference Jacobian with per-component step
    ``rel_step * max(1, |mean_i|)``.
    """
    mean = np.asarray(mean, dtype=float)
    n = mean.shape[0]
    steps = rel_step * np.maximum(1.0, np.abs(mean))
    probes = np.concatenate([mean[None, :], mean + np.diag(steps), mean - np.diag(steps)])
    values = np.asarray(h(probes), dtype=float).reshape(2 * n + 1)
    if not np.all(np.isfinite(values)):
        raise NumericalError(f"measurement function not finite near {mean}")
    J = (values[1:n + 1] - values[n + 1:]) / (2.0 * steps)
    Pxy = cov @ J
    return values[0], float(J @ Pxy), Pxy


def predict(mean, cov, tm: TransitionModel | None):
    if tm is None:
        return np.array(mean, dtype=float), np.array(cov, dtype=float)
    return tm.H @ mean, symmetrize(tm.H @ cov @ tm.H.T + tm.Qbar)


def _update(mean, cov, y, Ybar, F, Pxy, F_floor):
    F = max(F, F_floor)
    M = Pxy[:STATE_DIM] / F
    v = y - Ybar
    step = M * v
    post_cov, repaired = repair_psd(cov - F * np.outer(M, M))
    if repaired:
        log.warning("posterior covariance repaired by eigenvalue flooring")
    diag = StepDiagnostics(float(Ybar), float(F), float(v), float(np.linalg.norm(step)), repaired=repaired)
    return mean + step, post_cov, diag


def ukf_update(mean, cov, y, h: Callable, F_floor=0.0):
    """Unscented measurement update of a 5-state belief.

    ``h`` maps augmented points of shape ``(m, 6)`` to powers. Only the
    state rows of the gain are applied.
    """
    points = sigma_points(*augment(mean, cov))
    Ybar, F, Pxy = ut_moments(points, h)
    return _update(mean, cov, y, Ybar, F, Pxy, F_floor)


def ekf_update(mean, cov, y, h: Callable, F_floor=0.0):
    """Linearized measurement update with the same interface as ``ukf_update``."""
    Ybar, F, Pxy = linearized_moments(*augment(mean, cov), h)
    return _update(mean, cov, y, Ybar, F, Pxy, F_floor)


def power_function(antenna: AntennaConfig, cal: Calibration):
    """Vectorized ``h`` over augmented points for one antenna."""
    def h(points):
        points = np.asarray(points)
        return received_power(points[..., :STATE_DIM], points[..., STATE_DIM], antenna, cal)
    return h


def _step(update, belief, obs, tm, antenna, cal, skip_saturated):
    if tm is not None and not np.isclose(tm.dt, obs.t - belief.t, rtol=1e-9, atol=1e-12):
        raise ValueError(f"transition built for dt={tm.dt}, observation is {obs.t - belief.t} s after belief")
    if tm is None and obs.t != belief.t:
        raise ValueError("a transition model is required when time advances")
    mean, cov = predict(belief.mean, belief.cov, tm)
    h = power_function(antenna, cal)
    new_mean, new_cov, diag = update(mean, cov, obs.Y, h, F_FLOOR_SCALE * cal.P0 ** 2)
    if obs.saturated and skip_saturated:
        diag = StepDiagnostics(diag.Ybar, diag.F, diag.v, 0.0, saturated=True, skipped=True)
        return FilterBelief(mean, cov, obs.t), diag
    if obs.saturated:
        diag = StepDiagnostics(diag.Ybar, diag.F, diag.v, diag.gain_norm, saturated=True,
                               repaired=diag.repaired)
    return FilterBelief(new_mean, new_cov, obs.t), diag


def ukf_step(belief, obs, tm, antenna, cal=Calibration(), skip_saturated=False):
    """One predict/update cycle of the unscented filter.

    ``tm`` must be built for ``obs.t - belief.t``; pass ``None`` when the
    observation is at the belief time, which skips prediction.
    """
    return _step(ukf_update, belief, obs, tm, antenna, cal, skip_saturated)


def ekf_step(belief, obs, tm, antenna, cal=Calibration(), skip_saturated=False):
    """One predict/update cycle of the linearized filter."""
    return _step(ekf_update, belief, obs, tm, antenna, cal, skip_saturated)


def tower_index(towers) -> dict:
    if isinstance(towers, dict):
        return {str(k): v for k, v in towers.items()}
    return {a.id: a for a in towers}


def default_initial_belief(detections: Sequence[Detection], towers, offset=DEFAULT_INIT_OFFSET,
                           height=DEFAULT_INIT_HEIGHT, variances=DEFAULT_INIT_VAR):
    """Belief placed ``offset`` metres along the boresight of the first detecting antenna.

    Velocities start at zero and the height at ``height``; the belief is
    timed at the first detection, so the first step is a pure update.
    """
    if not detections:
        raise DataError("cannot place an initial belief without detections")
    first = detections[0]
    index = tower_index(towers)
    if first.antenna_id not in index:
        raise DataError(f"record 0: unknown antenna id {first.antenna_id!r}")
    ant = index[first.antenna_id]
    az = ant.boresight_azimuth
    x, y, _ = ant.position
    mean = np.array([x + offset * np.sin(az), 0.0, y + offset * np.cos(az), 0.0, height])
    return FilterBelief(mean, np.diag(np.asarray(variances, dtype=float)), float(first.t))


@dataclass(frozen=True, eq=False)
class FilterRun:
    """Array form of a filter run, one row per detection."""

    t: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    Ybar: np.ndarray
    F: np.ndarray
    v: np.ndarray
    gain_norm: np.ndarray
    saturated: np.ndarray
    skipped: np.ndarray
    repaired: np.ndarray
    Y: np.ndarray

    def track(self):
        return [FilterBelief(m, c, float(t)) for t, m, c in zip(self.t, self.means, self.covs)]

    def diagnostics(self):
        return [StepDiagnostics(float(a), float(b), float(c), float(d), bool(e), bool(f), bool(g))
                for a, b, c, d, e, f, g in zip(self.Ybar, self.F, self.v, self.gain_norm,
                                               self.saturated, self.repaired, self.skipped)]


def _prepare(detections, init, towers, cal):
    index = tower_index(towers)
    n = len(detections)
    t = np.empty(n)
    Z = np.empty(n)
    ids = []
    prev = init.t
    for k, d in enumerate(detections):
        if d.antenna_id not in index:
            raise DataError(f"record {k}: unknown antenna id {d.antenna_id!r}")
        if k == 0 and d.t < prev:
            raise DataError(f"record 0: time {d.t} precedes the initial belief at {prev}")
        if k > 0 and not d.t > prev:
            raise DataError(f"record {k}: time {d.t} is not after {prev}")
        t[k] = d.t
        Z[k] = d.Z
        ids.append(d.antenna_id)
        prev = d.t
    try:
        Y = display_to_power(Z, cal)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return index, t, np.atleast_1d(Y), np.atleast_1d(is_saturated(Z, cal)), ids


def run_filter(detections: Sequence[Detection], init: FilterBelief, params: MovementParams,
               towers, cal=Calibration(), kind="ukf", skip_saturated=False, fast=None):
    """Filter a detection sequence and return ``(track, diagnostics)`` lists."""
    run = run_filter_arrays(detections, init, params, towers, cal, kind, skip_saturated, fast)
    return run.track(), run.diagnostics()


def run_filter_arrays(detections, init, params, towers, cal=Calibration(), kind="ukf",
                      skip_saturated=False, fast=None) -> FilterRun:
    """Like ``run_filter`` but returns a :class:`FilterRun` of arrays.

    ``fast=None`` uses the compiled kernel whenever every antenna uses the
    default :class:`CosineLobePattern`; ``False`` forces the reference path.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    index, t, Y, sat, ids = _prepare(detections, init, towers, cal)
    if fast is None:
        fast = all(type(a.pattern) is CosineLobePattern for a in index.values())
    if fast:
        from ._kernels import run_kernel
        return run_kernel(t, Y, sat, ids, init, params, index, cal, kind, skip_saturated)
    return _run_reference(t, Y, sat, ids, init, params, index, cal, kind, skip_saturated)


def _run_reference(t, Y, sat, ids, init, params, index, cal, kind, skip_saturated):
    step = ukf_step if kind == "ukf" else ekf_step
    n = t.shape[0]
    means = np.empty((n, STATE_DIM))
    covs = np.empty((n, STATE_DIM, STATE_DIM))
    diags = []
    belief = FilterBelief(np.asarray(init.mean, dtype=float), np.asarray(init.cov, dtype=float), init.t)
    for k in range(n):
        dt = t[k] - belief.t
        tm = TransitionModel.build(params, dt) if dt > 0 else None
        obs = PowerObservation(t[k], ids[k], np.nan, Y[k], bool(sat[k]))
        try:
            belief, diag = step(belief, obs, tm, index[ids[k]], cal, skip_saturated)
        except NumericalError as exc:
            raise NumericalError(f"step {k}: {exc}") from None
        means[k] = belief.mean
        covs[k] = belief.cov
        diags.append(diag)
    col = lambda name, dtype=float: np.array([getattr(d, name) for d in diags], dtype=dtype)
    return FilterRun(t.copy(), means, covs, col("Ybar"), col("F"), col("v"), col("gain_norm"),
                     sat.astype(bool), col("skipped", bool), col("repaired", bool), Y)


__all__ = [
    "AUG_DIM", "FilterBelief", "FilterRun", "StepDiagnostics", "augment", "default_initial_belief",
    "ekf_step", "ekf_update", "linearized_moments", "power_function", "predict", "run_filter",
    "run_filter_arrays", "sigma_points", "ukf_step", "ukf_update", "ut_moments",
]
