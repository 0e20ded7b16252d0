"""Figures rendered next to the CSV outputs (matplotlib, non-interactive backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_run", "plot_sweep"]


def _positive(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    return np.where(y > 0, y, np.nan)


def plot_run(summary, path=None) -> Path:
    """Running R, consensus error and gradient norm against iteration, one line per seed."""
    out = Path(path) if path is not None else Path(summary.output) / "trace.png"
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.6))
    panels = [(6, "running R(k)"), (4, "consensus error"), (3, "||grad f(xbar)||^2")]
    for ax, (col, title) in zip(axes, panels):
        for r in summary.seeds:
            if r.trace.size:
                ax.plot(r.trace[:, 0], _positive(r.trace[:, col]), lw=0.8, label=f"seed {r.seed}")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_title(title)
    if len(summary.seeds) <= 10:
        axes[0].legend(fontsize=7)
    fig.suptitle(f"{summary.metadata['algorithm']}  n={summary.metadata['n']}  rho={summary.metadata['rho']:.3g}")
    fig.tight_layout()
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def plot_sweep(summaries: Sequence, table: Sequence[dict], path) -> Path:
    """Mean running R per sweep point, plus the comparative final-R bar chart."""
    out = Path(path)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 3.8))
    for s, row in zip(summaries, table):
        traces = [r.trace for r in s.seeds if r.trace.size]
        if not traces:
            continue
        m = min(t.shape[0] for t in traces)
        mean_R = np.mean([t[:m, 6] for t in traces], axis=0)
        ax1.plot(traces[0][:m, 0], _positive(mean_R), label=f"{row['axis']}={row['value']}")
    ax1.set_xscale("log")
    ax1.set_yscale("log")
    ax1.set_xlabel("iteration")
    ax1.set_title("seed-mean running R(k)")
    ax1.legend(fontsize=7)
    labels = [str(row["value"]) for row in table]
    vals = [row["final_R_mean"] if row["final_R_mean"] is not None else np.nan for row in table]
    ax2.bar(labels, vals)
    ax2.set_yscale("log")
    ax2.set_xlabel(table[0]["axis"] if table else "")
    ax2.set_title("final R (seed mean)")
    fig.tight_layout()
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out
