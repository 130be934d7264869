"""Matplotlib figures for CLI reports.

Kept apart from the numerical modules so that the library itself never
imports matplotlib; only the CLI report path does.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _save(fig, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp.png")
    fig.savefig(tmp, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    tmp.replace(path)
    return path


def plot_loss_history(steps, columns: dict[str, np.ndarray], support, target, path) -> Path:
    """Loss components and mask support size against the training step."""
    fig, (ax_loss, ax_sup) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    for name, values in columns.items():
        ax_loss.plot(steps, values, label=name, lw=1)
    ax_loss.set_ylabel("loss")
    ax_loss.legend(frameon=False, fontsize=8)
    ax_sup.step(steps, target, where="post", label="target", color="0.5", lw=2)
    ax_sup.step(steps, support, where="post", label="support", lw=1)
    ax_sup.set_yscale("log")
    ax_sup.set_xlabel("step")
    ax_sup.set_ylabel("features")
    ax_sup.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_mask(probs, path, salient=None) -> Path:
    """Sorted mask probabilities; salient columns (when known) drawn in a second colour."""
    probs = np.asarray(probs)
    order = np.argsort(-probs, kind="stable")
    fig, ax = plt.subplots(figsize=(7, 3))
    k = int(np.count_nonzero(probs))
    shown = order[: max(k, 1)]
    colours = ["C0"] * len(shown)
    if salient is not None:
        sal = set(int(i) for i in salient)
        colours = ["C3" if int(i) in sal else "C0" for i in shown]
    ax.bar(np.arange(len(shown)), probs[shown], color=colours, width=1.0)
    ax.set_xlabel("rank")
    ax.set_ylabel("mask weight")
    ax.set_title(f"{k} selected features")
    return _save(fig, path)


def plot_compare(summary: dict[str, dict[int, float]], metric: str, path) -> Path:
    """Mean test metric per method, one group of bars per k."""
    methods = list(summary)
    ks = sorted({k for per_k in summary.values() for k in per_k})
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(max(6, 1.5 * len(ks) + 4), 4))
    x = np.arange(len(ks))
    for i, m in enumerate(methods):
        vals = [summary[m].get(k, np.nan) for k in ks]
        ax.bar(x + i * width, vals, width, label=m)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels([str(k) for k in ks])
    ax.set_xlabel("selected features k")
    ax.set_ylabel(f"test {metric}")
    ax.legend(frameon=False, fontsize=8, ncol=2)
    return _save(fig, path)


def plot_ablation(summary: dict[str, tuple[float, float]], metric: str, path) -> Path:
    """Mean and standard deviation of the test metric per ablation cell."""
    cells = list(summary)
    means = [summary[c][0] for c in cells]
    sds = [summary[c][1] for c in cells]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(cells, means, yerr=sds, capsize=4, color=["C0", "C1", "C2", "C7"][: len(cells)])
    lo = min(m - s for m, s in zip(means, sds))
    ax.set_ylim(max(0.0, lo - 0.05), None)
    ax.set_ylabel(f"test {metric}")
    return _save(fig, path)
