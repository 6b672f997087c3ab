"""Figures rendered next to the CSV outputs of the CLI."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .linalg import PathLike  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 120,
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
    "lines.markersize": 4,
}


def figure_path(csv_path: PathLike) -> Path:
    return Path(csv_path).with_suffix(".png")


def _save(fig, path: PathLike) -> Path:
    path = Path(path)
    fig.tight_layout()
    # no Software/date metadata, so repeated runs give identical bytes
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def sweep_figure(table: Sequence[dict], path: PathLike, alpha_hat: float | None = None,
                 resting: float | None = None) -> Path:
    rows = sorted(table, key=lambda r: r["rate"])
    r = np.array([x["rate"] for x in rows])
    c = np.array([x["mean_ca"] for x in rows])
    sd = np.array([x["sd_ca"] for x in rows])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.errorbar(r, c, yerr=sd, marker="o", capsize=2, color="C0", label="simulated")
        if alpha_hat is not None and resting is not None:
            pos = r > 0
            excess = c[pos] - resting
            k = np.exp(np.mean(np.log(excess) - alpha_hat * np.log(r[pos])))
            grid = np.linspace(r[pos].min(), r.max(), 200)
            ax.plot(grid, resting + k * grid ** alpha_hat, "--", color="C1",
                    label=f"fit, exponent {alpha_hat:.3f}")
        ax.set_xlabel("presynaptic rate (Hz)")
        ax.set_ylabel("mean astrocytic Ca (uM)")
        ax.legend(frameon=False)
        return _save(fig, path)


def trace_figure(times: np.ndarray, ca: np.ndarray, pr: np.ndarray, path: PathLike) -> Path:
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(2, 1, sharex=True, figsize=(5.0, 4.0))
        a1.plot(times, ca, color="C0")
        a1.set_ylabel("Ca (uM)")
        a2.plot(times, pr, color="C2")
        a2.set_ylabel("release prob.")
        a2.set_xlabel("time (s)")
        return _save(fig, path)


def bench_figure(rows: Sequence[dict], path: PathLike) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        keys = sorted({(r["variant"], r["D"]) for r in rows})
        for i, (variant, d) in enumerate(keys):
            pts = sorted((r["N"], r["median_ns"]) for r in rows if r["variant"] == variant and r["D"] == d)
            n, t = np.array(pts).T
            ax.loglog(n, t * 1e-9, marker="o", color=f"C{i}", label=f"{variant}, D={d}")
        ax.set_xlabel("sequence length N")
        ax.set_ylabel("median time (s)")
        ax.legend(frameon=False, ncol=2)
        return _save(fig, path)


def training_figure(history: Sequence[dict], path: PathLike, title: str = "") -> Path:
    ep = [h["epoch"] for h in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(ep, [h["eval_acc"] for h in history], color="C0", label="eval accuracy")
        ax.set_ylim(0.0, 1.02)
        ax.set_xlabel("epoch")
        ax.set_ylabel("accuracy")
        ax2 = ax.twinx()
        ax2.plot(ep, [h["train_loss"] for h in history], color="C3", alpha=0.7, label="train loss")
        ax2.set_ylabel("loss")
        lines = ax.get_lines() + ax2.get_lines()
        ax.legend(lines, [ln.get_label() for ln in lines], frameon=False, loc="center right")
        if title:
            ax.set_title(title)
        return _save(fig, path)
