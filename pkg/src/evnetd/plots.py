"""Figure rendering for the CLI report path.

Every function writes a PNG next to the CSV it illustrates; nothing here
is needed for the numerics.
"""

from __future__ import annotations

import numpy as np

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

__all__ = [
    "plot_chain",
    "plot_region",
    "plot_thresholds",
    "plot_cdf_pairs",
    "plot_running_mean",
]

_MASS_FLOOR = 1e-14


def plot_chain(sol, path):
    """Idle-state delay distribution per loop on a log scale."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for j in range(sol.pi_I.shape[0]):
        pi = sol.pi_I[j]
        keep = pi > _MASS_FLOOR
        last = np.nonzero(keep)[0][-1] if keep.any() else 0
        ax.semilogy(np.arange(last + 1), pi[: last + 1], label=f"loop {j}")
    ax.set_xlabel("delay d")
    ax.set_ylabel(r"$\pi_{(I,d)}$")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_region(region, path):
    """Stability-margin heat map with the guaranteed region outlined."""
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    extent = [region.alpha_axis[0], region.alpha_axis[-1],
              region.gamma_axis[0], region.gamma_axis[-1]]
    im = ax.imshow(region.margin, origin="lower", extent=extent,
                   aspect="auto", cmap="RdYlGn", vmin=-1, vmax=1)
    ax.contour(region.alpha_axis, region.gamma_axis,
               region.stable.astype(float), levels=[0.5], colors="k",
               linewidths=1.2)
    ax.set_xlabel(r"$p_\alpha$")
    ax.set_ylabel(r"$p_\gamma$")
    ax.set_title(rf"stability margin, $\rho$ = {region.rho:g}")
    fig.colorbar(im, ax=ax, label="margin")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_thresholds(thresholds, path):
    """Designed trigger levels per delay."""
    d = np.arange(1, len(thresholds) + 1)
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    ax.plot(d, thresholds, "o-")
    ax.set_xlabel("delay d")
    ax.set_ylabel(r"$\Delta_d$")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_cdf_pairs(evolution, path, max_d: int = 5):
    """Real vs auxiliary error CDFs, one pair per delay."""
    D = min(max_d, len(evolution.idle) - 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    colors = plt.cm.viridis(np.linspace(0, 0.9, D))
    for d in range(1, D + 1):
        for grids, style in ((evolution.idle, "-"),
                             (evolution.auxiliary, "--")):
            g = grids[d]
            ax.plot(g.edges(), g.cdf_at_edges(), style, color=colors[d - 1],
                    lw=1.0, label=f"d={d}" if style == "-" else None)
    ax.set_xlabel("x")
    ax.set_ylabel("CDF")
    ax.set_title("real (solid) vs auxiliary (dashed)")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_running_mean(trace, path):
    """Running mean of x^T x per loop; flags divergence in the title."""
    if trace.x is None:
        raise ValueError("states were not recorded")
    n = trace.instants
    sq = trace.x[:n] ** 2
    if sq.ndim == 3:
        sq = sq.sum(axis=-1)
    running = np.cumsum(sq, axis=0) / np.arange(1, n + 1)[:, None]
    fig, ax = plt.subplots(figsize=(6, 4))
    for j in range(running.shape[1]):
        ax.semilogy(running[:, j], lw=0.8, label=f"loop {j}")
    title = "running mean of $x^2$"
    if trace.diverged.any():
        title += " (diverged)"
    ax.set_title(title)
    ax.set_xlabel("instant")
    ax.legend(loc="best", fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
