"""Optional static figures rendered next to the CSV outputs.

Only imported when the CLI is asked for figures, so the core library does
not pay the matplotlib import cost. Figures are written with the Agg
backend and without a creation timestamp, which keeps them byte-stable for
a fixed input.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_METADATA = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_METADATA)
    plt.close(fig)
    return path


def plot_track(path, towers, estimate=None, truth=None, title=None):
    """Plan view of an estimated track, the true path and the antennas.

    ``estimate`` and ``truth`` are ``(n, 5)`` state arrays; either may be
    omitted.
    """
    fig, ax = plt.subplots(figsize=(6, 6))
    if truth is not None:
        ax.plot(truth[:, 0], truth[:, 2], color="0.3", lw=1.2, label="true")
    if estimate is not None:
        ax.plot(estimate[:, 0], estimate[:, 2], color="tab:red", lw=1.0, label="estimate")
    xy = np.array([a.position[:2] for a in towers])
    ax.scatter(xy[:, 0], xy[:, 1], marker="^", color="tab:blue", zorder=3, label="antenna")
    for a in towers:
        ax.annotate(a.id, a.position[:2], textcoords="offset points", xytext=(4, 4), fontsize=8)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize=8)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_diagnostics(path, run):
    """Observed against predicted power, and the innovation, over time."""
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    top.semilogy(run.t, np.maximum(run.Y, 1e-300), ".", ms=2, color="0.4", label="observed")
    top.semilogy(run.t, np.maximum(run.Ybar, 1e-300), "-", lw=0.8, color="tab:red", label="predicted")
    top.set_ylabel("power")
    top.legend(loc="best", fontsize=8)
    bottom.plot(run.t, run.v, lw=0.6, color="tab:blue")
    bottom.set_ylabel("innovation")
    bottom.set_xlabel("t (s)")
    return _save(fig, path)


def plot_convergence(path, trace, title=None):
    """Best-so-far objective against iteration."""
    rows = trace.iterations
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r[0] for r in rows], [r[1] for r in rows], color="tab:blue")
    ax.set_xlabel("iteration")
    ax.set_ylabel("best negative log-likelihood")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_display_histogram(path, detections, cal):
    """Histogram of display numbers, saturated records included."""
    fig, ax = plt.subplots(figsize=(6, 4))
    z = np.array([d.Z for d in detections], dtype=float)
    ax.hist(z, bins=np.arange(cal.Zm, cal.ZM + 2) - 0.5, color="tab:gray")
    ax.set_xlabel("display number Z")
    ax.set_ylabel("count")
    return _save(fig, path)
