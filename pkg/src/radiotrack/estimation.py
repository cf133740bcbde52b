"""Maximum-likelihood estimation of the mean-reversion rates.

Each filter step predicts the received power with mean ``Ybar`` and
variance ``F``. The observed power is modelled as log-normal with those
moments, so the per-step log-power mean and variance are::

    T = 1 + F / Ybar**2,   mu = ln(Ybar / sqrt(T)),   sigma2 = ln(T)

and the negative log-likelihood of ``n`` independent terms is::

    n/2 ln(2 pi) + sum ln(sigma_k) + 1/2 sum (ln Y_k - mu_k)**2 / sigma2_k

Rates are optimized as ``phi = ln(beta)`` so they stay positive.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, NumericalError, OptimizationError
from .filtering import FilterRun, _prepare, _run_reference, run_filter_arrays
from .measurement import Calibration, CosineLobePattern
from .movement import DEFAULT_SIGMA, MovementParams

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
SIGMA2_FLOOR = 1e-12
# Observed and predicted powers are floored at POWER_FLOOR_SCALE * P0 before logs.
POWER_FLOOR_SCALE = 1e-3

# Starting rates (x, y, z) in 1/s when nothing better is known.
DEFAULT_INITIAL_BETA = (3e-3, 5.1e-4, 5e-5)
# exp() of larger log-rates overflows; such points score +inf.
MAX_LOG_RATE = 700.0


def lognormal_moments(Ybar, F):
    """Log-normal ``(mu, sigma2)`` whose mean is ``Ybar`` and variance ``F``."""
    Ybar = np.asarray(Ybar, dtype=float)
    F = np.asarray(F, dtype=float)
    if np.any(~(Ybar > 0)):
        raise ValueError(f"predicted power mean must be > 0, got {Ybar[~(Ybar > 0)].ravel()[0]!r}")
    if np.any(F < 0):
        raise ValueError("predicted power variance must be >= 0")
    T = 1.0 + F / (Ybar * Ybar)
    mu = np.log(Ybar) - 0.5 * np.log(T)
    sigma2 = np.log(T)
    if mu.ndim == 0:
        return float(mu), float(sigma2)
    return mu, sigma2


@dataclass(frozen=True, eq=False)
class LikelihoodTerms:
    """Per-step log-normal terms for the records that entered the likelihood."""

    mu: np.ndarray
    sigma2: np.ndarray
    logY: np.ndarray

    @property
    def v(self):
        return self.logY - self.mu

    def nll(self):
        n = self.mu.shape[0]
        return float(0.5 * n * LOG_2PI + 0.5 * np.sum(np.log(self.sigma2))
                     + 0.5 * np.sum(self.v ** 2 / self.sigma2))


def likelihood_terms(run: FilterRun, cal=Calibration()) -> LikelihoodTerms:
    """Build the log-normal terms from a filter run, dropping skipped records."""
    keep = ~run.skipped
    if not keep.any():
        raise DataError("no usable records: every detection is saturated and skipped")
    floor = POWER_FLOOR_SCALE * cal.P0
    Ybar = np.maximum(run.Ybar[keep], floor)
    mu, sigma2 = lognormal_moments(Ybar, run.F[keep])
    mu = np.atleast_1d(mu)
    sigma2 = np.maximum(np.atleast_1d(sigma2), SIGMA2_FLOOR)
    logY = np.log(np.maximum(run.Y[keep], floor))
    return LikelihoodTerms(mu, sigma2, logY)


def nll_from_run(run: FilterRun, cal=Calibration()):
    return likelihood_terms(run, cal).nll()


class LikelihoodProblem:
    """Negative log-likelihood as a function of ``phi = ln(beta)``.

    Detections, towers and the initial belief are validated once; every
    call reruns the filter from the same initial belief.
    """

    def __init__(self, detections, init, towers, cal=Calibration(), sigma=DEFAULT_SIGMA,
                 kind="ukf", skip_saturated=False):
        self.cal = cal
        self.init = init
        self.sigma = tuple(float(s) for s in sigma)
        self.kind = kind
        self.skip_saturated = skip_saturated
        self._index, self._t, self._Y, self._sat, self._ids = _prepare(detections, init, towers, cal)
        if self._t.size and self._sat.all():
            raise DataError("every detection is saturated")
        self._fast = all(type(a.pattern) is CosineLobePattern for a in self._index.values())
        if self._fast:
            from ._kernels import tower_arrays
            self._towers = tower_arrays(self._index, self._ids)
        self.evaluations = 0

    def run(self, phi) -> FilterRun:
        params = MovementParams.from_log_rates(phi, self.sigma)
        if self._fast:
            from ._kernels import run_kernel
            return run_kernel(self._t, self._Y, self._sat, self._ids, self.init, params, self._index,
                              self.cal, self.kind, self.skip_saturated, towers=self._towers)
        return _run_reference(self._t, self._Y, self._sat, self._ids, self.init, params, self._index,
                              self.cal, self.kind, self.skip_saturated)

    def __call__(self, phi):
        phi = np.asarray(phi, dtype=float)
        if not np.all(np.isfinite(phi)):
            raise ValueError(f"phi must be finite, got {phi}")
        self.evaluations += 1
        if np.any(phi > MAX_LOG_RATE):
            return math.inf
        return nll_from_run(self.run(phi), self.cal)


def negative_log_likelihood(phi, detections, init, towers, cal=Calibration(), sigma=DEFAULT_SIGMA,
                            kind="ukf", skip_saturated=False):
    """Full negative log-likelihood (constant included) at ``beta = exp(phi)``."""
    return LikelihoodProblem(detections, init, towers, cal, sigma, kind, skip_saturated)(phi)


@dataclass
class OptimizationTrace:
    """Best-so-far objective per iteration: rows of ``(iteration, best_nll, phi)``."""

    iterations: list = field(default_factory=list)

    def record(self, k, best, phi):
        self.iterations.append((int(k), float(best), np.array(phi, dtype=float)))

    @property
    def best_nll(self):
        return np.array([row[1] for row in self.iterations])

    @property
    def final(self):
        return self.iterations[-1]

    def __len__(self):
        return len(self.iterations)


def _guarded(f: Callable):
    def g(phi):
        try:
            value = float(f(phi))
        except (NumericalError, FloatingPointError, np.linalg.LinAlgError, OverflowError):
            return math.inf
        return value if math.isfinite(value) else math.inf
    return g


def _fd_gradient(f, x, rel_step):
    h = rel_step * np.maximum(1.0, np.abs(x))
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h[i])
    return g


def _fd_hessian(f, x, fx, rel_step):
    n = x.size
    h = rel_step * np.maximum(1.0, np.abs(x))
    H = np.empty((n, n))
    E = np.diag(h)
    plus = [f(x + E[i]) for i in range(n)]
    minus = [f(x - E[i]) for i in range(n)]
    for i in range(n):
        H[i, i] = (plus[i] - 2.0 * fx + minus[i]) / h[i] ** 2
        for j in range(i + 1, n):
            fpp = f(x + E[i] + E[j])
            fpm = f(x + E[i] - E[j])
            fmp = f(x - E[i] + E[j])
            fmm = f(x - E[i] - E[j])
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
    return H


def _make_positive_definite(H, rel_floor=1e-8):
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    w = np.abs(w)
    w = np.maximum(w, rel_floor * max(1.0, w.max()))
    return (V * w) @ V.T


def newton_optimize(nll: Callable, phi0, tol=1e-5, max_iters=100, grad_step=1e-5, hess_step=1e-4,
                    max_step=2.0, ftol=1e-12):
    """Damped Newton minimization with finite-difference derivatives.

    The Hessian is made positive definite by taking absolute eigenvalues
    with a relative floor, the step is capped at ``max_step`` per
    coordinate, and a backtracking Armijo search keeps the objective
    decreasing. Stops when the gradient infinity-norm drops below ``tol``,
    when a full line search cannot decrease the objective by more than
    ``ftol`` relative, or after ``max_iters`` iterations.

    Returns ``(phi_hat, trace)``.
    """
    f = _guarded(nll)
    x = np.array(phi0, dtype=float)
    fx = f(x)
    trace = OptimizationTrace()
    if not math.isfinite(fx):
        raise OptimizationError(f"objective not finite at the starting point {x}", trace)
    trace.record(0, fx, x)
    for it in range(1, max_iters + 1):
        g = _fd_gradient(f, x, grad_step)
        if not np.all(np.isfinite(g)):
            g = np.nan_to_num(g, nan=0.0, posinf=0.0, neginf=0.0)
        if np.max(np.abs(g)) < tol:
            break
        H = _fd_hessian(f, x, fx, hess_step)
        if np.all(np.isfinite(H)):
            step = -np.linalg.solve(_make_positive_definite(H), g)
        else:
            step = -g
        scale = np.max(np.abs(step)) / max_step
        if scale > 1.0:
            step /= scale
        slope = float(g @ step)
        alpha = 1.0
        accepted = False
        any_finite = False
        for _ in range(40):
            trial = x + alpha * step
            ft = f(trial)
            if math.isfinite(ft):
                any_finite = True
                if ft <= fx + 1e-4 * alpha * min(slope, 0.0) and ft <= fx:
                    accepted = True
                    break
            alpha *= 0.5
        if not any_finite:
            raise OptimizationError(f"objective not finite along the search direction at iteration {it}", trace)
        if not accepted:
            log.info("newton: line search stalled at iteration %d", it)
            break
        improvement = fx - ft
        x, fx = trial, ft
        trace.record(it, fx, x)
        if improvement <= ftol * (1.0 + abs(fx)):
            break
    return x, trace


@dataclass(frozen=True)
class PsoConfig:
    """Particle swarm settings. Initial positions are uniform in ``init_box``."""

    swarm_size: int = 30
    max_iters: int = 2000
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    init_box: tuple = ((math.log(1e-8), 0.0),) * 3
    seed: int = 0

    def __post_init__(self):
        if self.swarm_size < 1 or self.max_iters < 1:
            raise ValueError("swarm_size and max_iters must be >= 1")
        if min(self.inertia, self.cognitive, self.social) < 0:
            raise ValueError("PSO weights must be non-negative")
        box = np.asarray(self.init_box, dtype=float)
        if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
            raise ValueError(f"init_box must be a sequence of (low, high) pairs, got {self.init_box}")
        if self.swarm_size < 2 or self.cognitive == 0 or self.social == 0:
            warnings.warn("degenerate PSO configuration: particles may never improve", stacklevel=2)


def pso_optimize(nll: Callable, config=PsoConfig()):
    """Global-best particle swarm minimization.

    Velocities start at zero and follow
    ``v <- w v + c1 r1 (p_i - x_i) + c2 r2 (g - x_i)``, clamped to half the
    initial box width. The global best is updated as soon as a particle
    improves on it. Deterministic for a fixed seed.

    Returns ``(phi_hat, trace)``.
    """
    f = _guarded(nll)
    rng = np.random.default_rng(config.seed)
    box = np.asarray(config.init_box, dtype=float)
    lo, hi = box[:, 0], box[:, 1]
    m, d = config.swarm_size, box.shape[0]
    x = lo + (hi - lo) * rng.random((m, d))
    v = np.zeros((m, d))
    vmax = 0.5 * (hi - lo)
    cost = np.array([f(xi) for xi in x])
    trace = OptimizationTrace()
    if not np.any(np.isfinite(cost)):
        raise ValueError("PSO: objective is not finite at any initial particle")
    pbest = x.copy()
    pbest_cost = cost.copy()
    g = int(np.argmin(cost))
    gbest, gbest_cost = x[g].copy(), float(cost[g])
    trace.record(0, gbest_cost, gbest)
    w, c1, c2 = config.inertia, config.cognitive, config.social
    for k in range(1, config.max_iters):
        for i in range(m):
            r1 = rng.random(d)
            r2 = rng.random(d)
            v[i] = w * v[i] + c1 * r1 * (pbest[i] - x[i]) + c2 * r2 * (gbest - x[i])
            np.clip(v[i], -vmax, vmax, out=v[i])
            x[i] += v[i]
            ci = f(x[i])
            if ci < pbest_cost[i]:
                pbest_cost[i] = ci
                pbest[i] = x[i]
                if ci < gbest_cost:
                    gbest_cost = ci
                    gbest = x[i].copy()
        trace.record(k, gbest_cost, gbest)
    return gbest, trace


def newton_starts(config, nll=None):
    """Starting points for multistart Newton.

    The configured start comes first. The rest are Halton points in the
    PSO box: with ``nll`` given, ``newton_screen`` points are scored and the
    best ``newton_starts`` of them kept; otherwise the first
    ``newton_starts`` points are used as they are.
    """
    starts = [np.asarray(config.phi0, dtype=float)]
    if config.newton_starts <= 0:
        return starts
    from scipy.stats import qmc
    box = np.asarray(config.pso.init_box, dtype=float)
    count = config.newton_starts
    if nll is not None:
        count = max(count, config.newton_screen)
    unit = qmc.Halton(d=box.shape[0], scramble=False).random(count + 1)[1:]
    points = box[:, 0] + unit * (box[:, 1] - box[:, 0])
    if nll is not None and count > config.newton_starts:
        f = _guarded(nll)
        scores = np.array([f(p) for p in points])
        # Stable sort keeps Halton order among ties, so runs are reproducible.
        points = points[np.argsort(scores, kind="stable")[:config.newton_starts]]
    starts.extend(points)
    return starts


def multistart_newton(nll, starts, **kwargs):
    """Run :func:`newton_optimize` from each start and keep the best.

    The returned trace concatenates all runs with a running iteration
    counter and records the best objective seen so far.
    """
    trace = OptimizationTrace()
    best_phi, best = None, math.inf
    k = 0
    for phi0 in starts:
        try:
            phi, run = newton_optimize(nll, phi0, **kwargs)
        except OptimizationError as exc:
            log.info("newton start %s failed: %s", np.asarray(phi0), exc)
            continue
        for _, value, point in run.iterations:
            if value < best:
                best, best_phi = value, point
            trace.record(k, best, best_phi)
            k += 1
    if best_phi is None:
        raise OptimizationError("newton failed from every start", trace)
    return best_phi, trace


@dataclass(frozen=True)
class EstimationConfig:
    """Options for :func:`estimate_parameters`.

    ``phi0`` is the first Newton start (defaults to the log of
    ``DEFAULT_INITIAL_BETA``). Newton is local, so it is also restarted from
    the ``newton_starts`` best of ``newton_screen`` Halton points in
    ``pso.init_box`` and the best result kept. ``sigma`` is held fixed during estimation.
    """

    sigma: tuple = DEFAULT_SIGMA
    phi0: tuple = tuple(math.log(b) for b in DEFAULT_INITIAL_BETA)
    tol: float = 1e-5
    max_iters: int = 100
    newton_starts: int = 8
    newton_screen: int = 128
    pso: PsoConfig = field(default_factory=PsoConfig)
    skip_saturated: bool = False


def estimate_parameters(detections: Sequence, init, towers, cal=Calibration(), method="newton",
                        kind="ukf", config=EstimationConfig()):
    """Estimate the rates by minimizing the negative log-likelihood.

    Returns ``(params, trace)`` where ``params`` carries ``exp(phi_hat)``
    and the configured diffusion strengths.
    """
    problem = LikelihoodProblem(detections, init, towers, cal, config.sigma, kind, config.skip_saturated)
    if method == "newton":
        phi, trace = multistart_newton(problem, newton_starts(config, problem), tol=config.tol,
                                       max_iters=config.max_iters)
    elif method == "pso":
        phi, trace = pso_optimize(problem, config.pso)
    else:
        raise ValueError(f"method must be 'newton' or 'pso', got {method!r}")
    log.info("%s/%s: nll %.6f after %d evaluations", method, kind, trace.final[1], problem.evaluations)
    return MovementParams.from_log_rates(phi, config.sigma), trace
