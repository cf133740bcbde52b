"""Discrete-time Ornstein-Uhlenbeck movement model.

The state is ``[px, vx, py, vy, pz]``. Horizontal axes carry a position
driven by a mean-reverting velocity; the vertical axis is a mean-reverting
position. Each axis is discretized exactly over an interval ``dt``::

    H_axis = [[1, (1 - exp(-b dt)) / b],      H_z = exp(-b_z dt)
              [0,  exp(-b dt)          ]]

with process noise given by the integrated diffusion over the interval.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from ._linalg import robust_cholesky

PX, VX, PY, VY, PZ = range(5)
STATE_DIM = 5
POSITION_INDEX = (PX, PY, PZ)

# Below this value of beta*dt the noise integrals are summed as power series.
SERIES_THRESHOLD = 0.1
_SERIES_TERMS = 25

DEFAULT_SIGMA = (1.0, 1.0, 0.1)


def state_vector(px, vx, py, vy, pz):
    """Build a validated state array in ``[px, vx, py, vy, pz]`` order."""
    x = np.array([px, vx, py, vy, pz], dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError(f"state components must be finite, got {x}")
    return x


def as_state(x):
    x = np.asarray(x, dtype=float)
    if x.shape != (STATE_DIM,):
        raise ValueError(f"state must have shape (5,), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"state components must be finite, got {x}")
    return x


@dataclass(frozen=True)
class MovementParams:
    """Per-axis mean-reversion rates (1/s) and diffusion strengths."""

    beta_x: float
    beta_y: float
    beta_z: float
    sigma_x: float = DEFAULT_SIGMA[0]
    sigma_y: float = DEFAULT_SIGMA[1]
    sigma_z: float = DEFAULT_SIGMA[2]

    def __post_init__(self):
        for name in ("beta_x", "beta_y", "beta_z", "sigma_x", "sigma_y", "sigma_z"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be finite and > 0, got {value!r}")

    @property
    def beta(self):
        return np.array([self.beta_x, self.beta_y, self.beta_z])

    @property
    def sigma(self):
        return np.array([self.sigma_x, self.sigma_y, self.sigma_z])

    @classmethod
    def from_arrays(cls, beta, sigma=DEFAULT_SIGMA):
        bx, by, bz = (float(b) for b in beta)
        sx, sy, sz = (float(s) for s in sigma)
        return cls(bx, by, bz, sx, sy, sz)

    @classmethod
    def from_log_rates(cls, phi, sigma=DEFAULT_SIGMA):
        """Parameters with ``beta = exp(phi)``; ``sigma`` is passed through."""
        return cls.from_arrays(np.exp(np.asarray(phi, dtype=float)), sigma)


@njit(cache=True)
def ou_axis(beta, sigma, dt):
    """Closed-form transition and noise entries for one horizontal axis.

    Returns ``(h01, h11, q00, q01, q11)``: the off-diagonal and velocity
    entries of the 2x2 transition block and the upper triangle of its noise
    covariance. Written with scalar ``math`` only so it can be compiled.
    """
    x = beta * dt
    s2 = sigma * sigma
    e1 = -math.expm1(-x)
    e2 = -math.expm1(-2.0 * x)
    h01 = dt * (e1 / x)
    h11 = 1.0 - e1
    q11 = s2 * dt * (e2 / (2.0 * x))
    if x < SERIES_THRESHOLD:
        q00 = s2 * dt ** 3 * _series_q00(x)
        q01 = s2 * dt * dt * _series_q01(x)
    else:
        q00 = s2 / beta ** 3 * (x - 2.0 * e1 + 0.5 * e2)
        q01 = s2 / beta ** 2 * (e1 - 0.5 * e2)
    return h01, h11, q00, q01, q11


@njit(cache=True)
def _series_q00(x):
    # q00 / (s2 dt^3) = sum_{k>=3} (-1)^(k+1) (2^(k-1) - 2) x^(k-3) / k!
    total = 0.0
    xpow = 1.0
    fact = 6.0
    pow2 = 4.0
    sign = 1.0
    for k in range(3, _SERIES_TERMS + 3):
        total += sign * (pow2 - 2.0) * xpow / fact
        xpow *= x
        fact *= k + 1
        pow2 *= 2.0
        sign = -sign
    return total


@njit(cache=True)
def _series_q01(x):
    # q01 / (s2 dt^2) = sum_{k>=2} (-1)^(k+1) (1 - 2^(k-1)) x^(k-2) / k!
    total = 0.0
    xpow = 1.0
    fact = 2.0
    pow2 = 2.0
    sign = -1.0
    for k in range(2, _SERIES_TERMS + 2):
        total += sign * (1.0 - pow2) * xpow / fact
        xpow *= x
        fact *= k + 1
        pow2 *= 2.0
        sign = -sign
    return total


@njit(cache=True)
def ou_vertical(beta, sigma, dt):
    """Return ``(h, q)`` for the mean-reverting vertical position."""
    x = beta * dt
    e2 = -math.expm1(-2.0 * x)
    return math.exp(-x), sigma * sigma * dt * (e2 / (2.0 * x))


def _check(params, dt):
    if not isinstance(params, MovementParams):
        raise TypeError("params must be a MovementParams")
    if not (math.isfinite(dt) and dt > 0.0):
        raise ValueError(f"dt must be finite and > 0, got {dt!r}")


def transition_matrix(params, dt):
    """Block-diagonal 5x5 transition matrix over an interval ``dt``."""
    _check(params, dt)
    H = np.zeros((STATE_DIM, STATE_DIM))
    for beta, sigma, (i, j) in ((params.beta_x, params.sigma_x, (PX, VX)),
                                (params.beta_y, params.sigma_y, (PY, VY))):
        h01, h11, *_ = ou_axis(beta, sigma, dt)
        H[i, i] = 1.0
        H[i, j] = h01
        H[j, j] = h11
    H[PZ, PZ] = ou_vertical(params.beta_z, params.sigma_z, dt)[0]
    return H


def process_noise_cov(params, dt):
    """Block-diagonal 5x5 process-noise covariance over an interval ``dt``."""
    _check(params, dt)
    Q = np.zeros((STATE_DIM, STATE_DIM))
    for beta, sigma, (i, j) in ((params.beta_x, params.sigma_x, (PX, VX)),
                                (params.beta_y, params.sigma_y, (PY, VY))):
        _, _, q00, q01, q11 = ou_axis(beta, sigma, dt)
        Q[i, i] = q00
        Q[i, j] = Q[j, i] = q01
        Q[j, j] = q11
    Q[PZ, PZ] = ou_vertical(params.beta_z, params.sigma_z, dt)[1]
    return Q


@dataclass(frozen=True, eq=False)
class TransitionModel:
    H: np.ndarray
    Qbar: np.ndarray
    dt: float

    @classmethod
    def build(cls, params, dt):
        H = transition_matrix(params, dt)
        Q = process_noise_cov(params, dt)
        H.setflags(write=False)
        Q.setflags(write=False)
        return cls(H, Q, float(dt))


def propagate(state, model):
    """Deterministic mean propagation ``H @ state``."""
    return model.H @ as_state(state)


def sample_transition(state, params, dt, rng):
    """Draw the next state from ``N(H @ state, Qbar)``.

    ``rng`` is a ``numpy.random.Generator`` owned by the caller.
    """
    model = TransitionModel.build(params, dt)
    L = robust_cholesky(model.Qbar)
    return model.H @ as_state(state) + L @ rng.standard_normal(STATE_DIM)
