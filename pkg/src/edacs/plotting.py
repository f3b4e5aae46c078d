"""Figure rendering for the command-line reports (files only, no display)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_phase_diagram(grid, path):
    """Heat map of mean relative error over the ``(s, c)`` grid."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    im = ax.imshow(grid.cell_errors, origin="lower", aspect="auto", cmap="viridis",
                   vmin=0.0, vmax=max(1.0, float(np.nanmax(grid.cell_errors))))
    ax.set_xticks(range(len(grid.c_values)), [str(c) for c in grid.c_values])
    ax.set_yticks(range(len(grid.s_values)), [str(s) for s in grid.s_values])
    ax.set_xlabel("baseline jumps c")
    ax.set_ylabel("SCR events s")
    ax.set_title(f"mean relative error (alpha={grid.alpha:g}, {grid.trials} trials)")
    fig.colorbar(im, ax=ax)
    return _save(fig, path)


def plot_roc(outcomes, path):
    """ROC curves, one per variant; ``outcomes`` maps name to a result with ``.roc``."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for name, out in outcomes.items():
        roc = getattr(out, "roc", out)
        ax.step(roc.fpr, roc.tpr, where="post", label=f"{name} (AUC {roc.auc:.3f})")
    ax.plot([0, 1], [0, 1], color="grey", lw=0.8, ls=":")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(loc="lower right")
    return _save(fig, path)


def plot_decomposition(y, result, sample_rate_hz, path):
    """Observation, fitted SCR component and the recovered event train."""
    t_y = np.arange(len(y)) / sample_rate_hz
    t_x = np.arange(result.x_hat.size) / sample_rate_hz
    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    ax0.plot(t_y, y, lw=0.9, label="observation")
    ax0.plot(t_y, result.scr_signal + (y[0] - result.scr_signal[0]), lw=0.9,
             label="SCR component (offset)")
    ax0.set_ylabel("conductance")
    ax0.legend(loc="upper right")
    ax1.vlines(t_x, 0, result.x_hat, lw=1.0)
    ax1.axhline(0, color="grey", lw=0.5)
    ax1.set_ylabel("SCR events")
    ax1.set_xlabel("time (s)")
    return _save(fig, path)
