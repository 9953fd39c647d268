"""Figures for the CLI reports, written to files with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def accuracy_matrix(values, path, title: str = "") -> Path:
    """Heatmap of ``A[t, i]`` with undefined entries left blank."""
    a = np.asarray(values, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.0))
        im = ax.imshow(np.ma.masked_invalid(a), vmin=0, vmax=1, cmap="viridis")
        for (t, i), v in np.ndenumerate(a):
            if np.isfinite(v):
                ax.text(i, t, f"{100 * v:.1f}", ha="center", va="center", fontsize=7,
                        color="w" if v < 0.6 else "k")
        ax.set_xlabel("evaluated task")
        ax.set_ylabel("after training task")
        ax.set_xticks(range(a.shape[1]))
        ax.set_yticks(range(a.shape[0]))
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046)
        return _save(fig, path)


def sweep(rows, path, baseline: float | None = None) -> Path:
    """Mean ACC against gamma, one line per J. ``rows``: dicts with gamma, steps, mean, sem."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 3.0))
        for j in sorted({r["steps"] for r in rows}):
            pts = sorted((r for r in rows if r["steps"] == j), key=lambda r: r["gamma"])
            ax.errorbar([r["gamma"] for r in pts], [100 * r["mean"] for r in pts],
                        yerr=[100 * r["sem"] for r in pts], marker="o", capsize=2, label=f"J={j}")
        if baseline is not None:
            ax.axhline(100 * baseline, color="0.5", ls="--", lw=1, label="no refresh")
        ax.set_xlabel("unlearning rate")
        ax.set_ylabel("ACC (%)")
        ax.legend(frameon=False)
        return _save(fig, path)


def theory(report, path) -> Path:
    """Per-instance cosine and relative gap of a theorem check."""
    inst = report.instances
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(6.0, 2.6))
        ids = [r.instance for r in inst]
        a1.plot(ids, [r.cosine for r in inst], "o", ms=3)
        a1.axhline(0.95, color="0.5", ls="--", lw=1)
        a1.set_xlabel("instance")
        a1.set_ylabel("cosine")
        a2.semilogy(ids, [max(r.gap, 1e-18) for r in inst], "o", ms=3)
        a2.set_xlabel("instance")
        a2.set_ylabel("relative gap")
        fig.suptitle(f"{report.kind}, F={report.fisher_source}, s={report.s:g}")
        return _save(fig, path)


def bench(labels, seconds, path) -> Path:
    """Wall-clock bars; ``seconds`` is a list of per-seed timings per label."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.8))
        means = [np.mean(s) for s in seconds]
        errs = [np.std(s) for s in seconds]
        ax.bar(range(len(labels)), means, yerr=errs, capsize=3, color=["0.6", "C0"][: len(labels)])
        ax.set_xticks(range(len(labels)))
        ax.set_xticklabels(labels)
        ax.set_ylabel("seconds per run")
        return _save(fig, path)
