"""Small dense linear-algebra helpers shared by the model and filter code."""

import numpy as np

from .errors import NumericalError

JITTER_SCALE = 1e-12
JITTER_DOUBLINGS = 3


def robust_cholesky(A):
    """Lower Cholesky factor of ``A`` with diagonal jitter escalation.

    On failure a jitter of ``1e-12 * trace(A) / dim`` is added to the
    diagonal and doubled up to three times before giving up.
    """
    A = np.asarray(A, dtype=float)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    dim = A.shape[0]
    jitter = JITTER_SCALE * max(np.trace(A), 0.0) / dim
    if jitter == 0.0:
        jitter = JITTER_SCALE
    eye = np.eye(dim)
    for _ in range(JITTER_DOUBLINGS + 1):
        try:
            return np.linalg.cholesky(A + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise NumericalError(f"matrix not positive definite after jitter {jitter / 2.0:.3g}")


def symmetrize(A):
    return 0.5 * (A + A.T)


def repair_psd(P):
    """Return ``(P', repaired)`` with ``P'`` symmetric and positive definite.

    ``P`` is symmetrized first. If it does not admit a Cholesky factor its
    eigenvalues are floored at ``1e-12 * max(trace/dim, 1e-300)``.
    """
    P = symmetrize(np.asarray(P, dtype=float))
    try:
        np.linalg.cholesky(P)
        return P, False
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(P)
    floor = JITTER_SCALE * max(np.trace(P) / P.shape[0], 1e-300)
    w = np.maximum(w, floor)
    return symmetrize((V * w) @ V.T), True


def psd_sqrt(A):
    """Symmetric factor ``S`` with ``S @ S.T == A`` for a PSD matrix.

    Used where a zero covariance must be accepted (Monte-Carlo sampling).
    """
    A = symmetrize(np.asarray(A, dtype=float))
    w, V = np.linalg.eigh(A)
    scale = max(np.max(np.abs(w)), 1e-300)
    if w.min() < -1e-9 * scale:
        raise NumericalError(f"covariance has negative eigenvalue {w.min():.3g}")
    return V * np.sqrt(np.clip(w, 0.0, None))
