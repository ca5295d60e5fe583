"""Figure rendering for study outputs.

Every plot lands next to the delimited output as a PNG; the CSV stays the
primary artifact and callers can suppress figures entirely.  The Agg backend
is forced before pyplot loads so rendering works headless.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _finish(fig, path) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return str(path)


def save_gap_boxplot(gaps_by_label: dict, path, title="exact log-likelihood gap") -> str:
    """Box plot of ell(theta*) - ell(theta_hat) per run group."""
    fig, ax = plt.subplots(figsize=(6, 4))
    labels = list(gaps_by_label)
    data = [np.asarray(gaps_by_label[k], dtype=np.float64) for k in labels]
    data = [d[np.isfinite(d)] for d in data]
    ax.boxplot(data, tick_labels=labels, whis=(5, 95))
    ax.set_ylabel("log-likelihood gap")
    ax.set_title(title)
    ax.axhline(0.0, color="gray", lw=0.8)
    return _finish(fig, path)


def save_theta_scatter(thetas_by_label: dict, theta_star, path,
                       title="fitted parameters") -> str:
    """Scatter of fitted (theta0, theta1) pairs with the exact optimum marked."""
    fig, ax = plt.subplots(figsize=(5, 5))
    for label, pts in thetas_by_label.items():
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        ax.scatter(pts[:, 0], pts[:, 1], s=12, alpha=0.6, label=label)
    if theta_star is not None:
        ax.scatter([theta_star[0]], [theta_star[1]], marker="*", s=160,
                   color="black", zorder=5, label="exact")
    ax.set_xlabel("theta0")
    ax.set_ylabel("theta1")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_clt_histogram(z, path, title="scaled estimation error") -> str:
    """Histogram of standardized errors with the standard normal overlaid."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(z, bins=40, density=True, alpha=0.7, color="#4878a8")
    grid = np.linspace(min(-4.0, z.min()), max(4.0, z.max()), 400)
    ax.plot(grid, np.exp(-grid**2 / 2) / math.sqrt(2 * math.pi), "k-", lw=1.2,
            label="standard normal")
    ax.set_xlabel("standardized error")
    ax.set_ylabel("density")
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _finish(fig, path)


def save_variance_bars(labels, traces, path,
                       title="asymptotic variance by instrumental density") -> str:
    """Bar chart comparing trace of the sandwich covariance across densities."""
    fig, ax = plt.subplots(figsize=(5, 4))
    x = np.arange(len(labels))
    ax.bar(x, np.asarray(traces, dtype=np.float64), color="#4878a8", alpha=0.85)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=9)
    ax.set_ylabel("trace of sandwich covariance")
    ax.set_title(title)
    return _finish(fig, path)
