"""Compiled filter loop for antennas using the default cosine-lobe pattern.

Mirrors ``filtering._run_reference`` step for step; the two are checked
against each other in the test suite. Likelihood evaluation calls this
thousands of times per optimization, which is why it exists.
"""

import logging
import math

import numpy as np
from numba import njit

from ._linalg import JITTER_DOUBLINGS, JITTER_SCALE
from .errors import NumericalError
from .filtering import F_FLOOR_SCALE, JACOBIAN_REL_STEP, FilterRun
from .measurement import cosine_lobe_amplitude
from .movement import ou_axis, ou_vertical

_OK = 0
_NONFINITE = 1
_NOT_PD = 2


@njit(cache=True)
def _cholesky(A, L):
    n = A.shape[0]
    for i in range(n):
        for j in range(n):
            L[i, j] = 0.0
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not s > 0.0:
            return False
        L[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return True


@njit(cache=True)
def _robust_cholesky(A, L):
    if _cholesky(A, L):
        return True
    n = A.shape[0]
    tr = 0.0
    for i in range(n):
        tr += A[i, i]
    jitter = JITTER_SCALE * max(tr, 0.0) / n
    if jitter == 0.0:
        jitter = JITTER_SCALE
    B = A.copy()
    for _ in range(JITTER_DOUBLINGS + 1):
        for i in range(n):
            B[i, i] = A[i, i] + jitter
        if _cholesky(B, L):
            return True
        jitter *= 2.0
    return False


@njit(cache=True)
def _power(x, k, pos, sin_az, cos_az, amp, expo, floor, sqrt_p0):
    xi = cosine_lobe_amplitude(x[0] - pos[k, 0], x[2] - pos[k, 1], x[4] - pos[k, 2],
                               sin_az[k], cos_az[k], amp[k], expo[k], floor[k])
    a = xi + sqrt_p0 * x[5]
    return a * a


@njit(cache=True)
def _filter(t, Y, use, ant, t0, x0, P0, beta, sigma, pos, sin_az, cos_az, amp, expo, floor,
            sqrt_p0, f_floor, ekf, rel_step):
    n = t.shape[0]
    means = np.empty((n, 5))
    covs = np.empty((n, 5, 5))
    Ybar_out = np.empty(n)
    F_out = np.empty(n)
    v_out = np.empty(n)
    gain_out = np.zeros(n)
    repaired = np.zeros(n, dtype=np.bool_)

    x = x0.copy()
    P = P0.copy()
    H = np.zeros((5, 5))
    Q = np.zeros((5, 5))
    Paug = np.zeros((6, 6))
    L = np.zeros((6, 6))
    L5 = np.zeros((5, 5))
    xa = np.zeros(6)
    pt = np.zeros(6)
    Pxy = np.zeros(6)
    hv = np.zeros(12)
    t_prev = t0

    for k in range(n):
        dt = t[k] - t_prev
        if dt > 0.0:
            H[:, :] = 0.0
            Q[:, :] = 0.0
            for axis in range(2):
                i = 2 * axis
                h01, h11, q00, q01, q11 = ou_axis(beta[axis], sigma[axis], dt)
                H[i, i] = 1.0
                H[i, i + 1] = h01
                H[i + 1, i + 1] = h11
                Q[i, i] = q00
                Q[i, i + 1] = q01
                Q[i + 1, i] = q01
                Q[i + 1, i + 1] = q11
            hz, qz = ou_vertical(beta[2], sigma[2], dt)
            H[4, 4] = hz
            Q[4, 4] = qz
            x = H @ x
            P = H @ P @ H.T + Q
            P = 0.5 * (P + P.T)
        t_prev = t[k]

        for i in range(5):
            xa[i] = x[i]
            for j in range(5):
                Paug[i, j] = P[i, j]
            Paug[i, 5] = 0.0
            Paug[5, i] = 0.0
        xa[5] = 0.0
        Paug[5, 5] = 1.0
        a = ant[k]

        if ekf:
            Ybar = _power(xa, a, pos, sin_az, cos_az, amp, expo, floor, sqrt_p0)
            if not math.isfinite(Ybar):
                return _NONFINITE, k, means, covs, Ybar_out, F_out, v_out, gain_out, repaired
            J = np.zeros(6)
            for i in range(6):
                step = rel_step * max(1.0, abs(xa[i]))
                pt[:] = xa
                pt[i] = xa[i] + step
                hp = _power(pt, a, pos, sin_az, cos_az, amp, expo, floor, sqrt_p0)
                pt[i] = xa[i] - step
                hm = _power(pt, a, pos, sin_az, cos_az, amp, expo, floor, sqrt_p0)
                if not (math.isfinite(hp) and math.isfinite(hm)):
                    return _NONFINITE, k, means, covs, Ybar_out, F_out, v_out, gain_out, repaired
                J[i] = (hp - hm) / (2.0 * step)
            Pxy[:] = Paug @ J
            F = 0.0
            for i in range(6):
                F += J[i] * Pxy[i]
        else:
            Pn = 6.0 * Paug
            if not _robust_cholesky(Pn, L):
                return _NOT_PD, k, means, covs, Ybar_out, F_out, v_out, gain_out, repaired
            for s in range(12):
                col = s % 6
                sign = 1.0 if s < 6 else -1.0
                for i in range(6):
                    pt[i] = xa[i] + sign * L[i, col]
                hv[s] = _power(pt, a, pos, sin_az, cos_az, amp, expo, floor, sqrt_p0)
                if not math.isfinite(hv[s]):
                    return _NONFINITE, k, means, covs, Ybar_out, F_out, v_out, gain_out, repaired
            Ybar = 0.0
            for s in range(12):
                Ybar += hv[s]
            Ybar /= 12.0
            F = 0.0
            Pxy[:] = 0.0
            for s in range(12):
                dh = hv[s] - Ybar
                F += dh * dh
                col = s % 6
                sign = 1.0 if s < 6 else -1.0
                for i in range(6):
                    Pxy[i] += sign * L[i, col] * dh
            F /= 12.0
            for i in range(6):
                Pxy[i] /= 12.0

        F = max(F, f_floor)
        v = Y[k] - Ybar
        Ybar_out[k] = Ybar
        F_out[k] = F
        v_out[k] = v
        if use[k]:
            gn = 0.0
            for i in range(5):
                m = Pxy[i] / F
                x[i] += m * v
                gn += (m * v) ** 2
            gain_out[k] = math.sqrt(gn)
            for i in range(5):
                for j in range(5):
                    P[i, j] -= Pxy[i] * Pxy[j] / F
            P = 0.5 * (P + P.T)
            if not _cholesky(P, L5):
                w, V = np.linalg.eigh(P)
                tr = 0.0
                for i in range(5):
                    tr += P[i, i]
                fl = JITTER_SCALE * max(tr / 5.0, 1e-300)
                for i in range(5):
                    if w[i] < fl:
                        w[i] = fl
                P = (V * w) @ V.T
                P = 0.5 * (P + P.T)
                repaired[k] = True
        means[k] = x
        covs[k] = P
    return _OK, -1, means, covs, Ybar_out, F_out, v_out, gain_out, repaired


def tower_arrays(index, ids):
    names = sorted(index)
    lookup = {name: i for i, name in enumerate(names)}
    ants = [index[name] for name in names]
    pos = np.array([a.position for a in ants], dtype=float).reshape(-1, 3)
    az = np.array([a.boresight_azimuth for a in ants], dtype=float)
    amp = np.array([a.pattern.A for a in ants], dtype=float)
    expo = np.array([a.pattern.p for a in ants], dtype=float)
    floor = np.array([a.pattern.floor for a in ants], dtype=float)
    ant = np.array([lookup[i] for i in ids], dtype=np.int64)
    return ant, pos, np.sin(az), np.cos(az), amp, expo, floor


def run_kernel(t, Y, sat, ids, init, params, index, cal, kind, skip_saturated, towers=None):
    """Run the compiled filter and wrap its output as a ``FilterRun``."""
    arrays = towers if towers is not None else tower_arrays(index, ids)
    ant, pos, sin_az, cos_az, amp, expo, floor = arrays
    use = ~(sat & skip_saturated)
    status, k, means, covs, Ybar, F, v, gain, repaired = _filter(
        t, Y, use, ant, float(init.t), np.asarray(init.mean, dtype=float),
        np.asarray(init.cov, dtype=float), params.beta, params.sigma, pos, sin_az, cos_az,
        amp, expo, floor, math.sqrt(cal.P0), F_FLOOR_SCALE * cal.P0 ** 2, kind == "ekf",
        JACOBIAN_REL_STEP)
    if status == _NONFINITE:
        raise NumericalError(f"step {k}: measurement function not finite (degenerate geometry?)")
    if status == _NOT_PD:
        raise NumericalError(f"step {k}: augmented covariance not positive definite after jitter")
    if repaired.any():
        logging.getLogger("radiotrack.filtering").warning(
            "posterior covariance repaired at %d step(s)", int(repaired.sum()))
    skipped = ~use
    gain[skipped] = 0.0
    return FilterRun(t.copy(), means, covs, Ybar, F, v, gain, sat.astype(bool), skipped, repaired, Y)
