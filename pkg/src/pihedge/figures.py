"""Matplotlib rendering of pipeline outputs to PNG files.

Every figure is written next to the delimited data it visualizes; nothing is
shown interactively (Agg backend).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

DPI = 130


def regression_figure(
    out_path: str | Path,
    decisions: np.ndarray,
    changes: np.ndarray,
    grid: np.ndarray,
    means: np.ndarray,
    stds: np.ndarray,
    title: str = "",
) -> Path:
    """Training scatter with the predictive mean and 1/2-sigma bands."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.fill_between(grid, means - 2 * stds, means + 2 * stds, alpha=0.15, label="mean ± 2σ")
    ax.fill_between(grid, means - stds, means + stds, alpha=0.3, label="mean ± 1σ")
    ax.plot(grid, means, lw=1.5, label="predictive mean")
    ax.scatter(decisions, changes, s=12, c="k", alpha=0.6, label="training samples")
    ax.set_xlabel("decision (USD)")
    ax.set_ylabel("price change")
    if title:
        ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI)
    plt.close(fig)
    return Path(out_path)


def trace_figure(out_path: str | Path, trace: list[float], title: str = "") -> Path:
    """Log-likelihood trace of one EM fit."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(trace)), trace, marker=".", lw=1)
    ax.set_xlabel("iteration")
    ax.set_ylabel("log-likelihood")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI)
    plt.close(fig)
    return Path(out_path)


def paths_figure(
    out_path: str | Path,
    matrix: np.ndarray,
    ylabel: str = "price (USD)",
    title: str = "",
    max_shown: int = 20,
) -> Path:
    """A uniform subsample of simulated paths over time."""
    matrix = np.asarray(matrix)
    step = max(1, matrix.shape[0] // max_shown)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for row in matrix[::step]:
        ax.plot(row, lw=0.8, alpha=0.7)
    ax.set_xlabel("time slot")
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out_path, dpi=DPI)
    plt.close(fig)
    return Path(out_path)


def hedge_figures(out_dir: str | Path, stem: str, a, pi, q) -> list[Path]:
    """Hedge positions, portfolio values, and Q-value convergence plots."""
    out_dir = Path(out_dir)
    written = []

    for name, matrix, ylabel in (
        ("positions", a, "hedge position (per share)"),
        ("portfolio", pi, "portfolio value (USD)"),
    ):
        path = out_dir / f"{stem}_{name}.png"
        paths_figure(path, np.asarray(matrix), ylabel=ylabel, title=name)
        written.append(path)

    q = np.asarray(q)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(q.mean(axis=0), lw=1.5, label="cross-sectional mean Q")
    ax.fill_between(
        range(q.shape[1]),
        np.quantile(q, 0.05, axis=0),
        np.quantile(q, 0.95, axis=0),
        alpha=0.2,
        label="5–95% band",
    )
    ax.axhline(q[:, 0].mean(), ls="--", lw=1, c="k",
               label=f"Q at t=0: {q[:, 0].mean():.3f}")
    ax.set_xlabel("time slot")
    ax.set_ylabel("Q-value")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    path = out_dir / f"{stem}_qvalues.png"
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    written.append(path)
    return written
