"""Report figures. Everything renders off-screen to files."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
}

# PNG metadata otherwise embeds the matplotlib version
_META = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def plot_threshold_sweep(sweeps: Mapping[str, Sequence], path: str | Path) -> Path:
    """Accuracy and retained proportion against threshold, one line per label spec."""
    with plt.rc_context(RC):
        fig, (ax_acc, ax_prop) = plt.subplots(1, 2, figsize=(8, 3.2))
        for name, rows in sweeps.items():
            x = np.arange(len(rows))
            ax_acc.plot(x, [r.accuracy for r in rows], marker="o", ms=3, label=name)
            ax_prop.plot(x, [max(r.proportion, 1e-7) for r in rows], marker="o", ms=3, label=name)
        ticks = [str(r.threshold) for r in next(iter(sweeps.values()))] if sweeps else []
        for ax in (ax_acc, ax_prop):
            ax.set_xticks(range(len(ticks)), ticks, rotation=45)
            ax.set_xlabel("confidence threshold")
        ax_acc.set_ylabel("accuracy")
        ax_prop.set_ylabel("dataset proportion")
        ax_prop.set_yscale("log")
        ax_acc.legend(loc="best")
        return _save(fig, path)


def plot_equity_curves(curves: Mapping[str, tuple[np.ndarray, np.ndarray]], path: str | Path, benchmarks: Mapping[str, float] | None = None) -> Path:
    """Equity normalised to its starting value. Benchmarks are drawn as end-of-period reference lines."""
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(7, 3.5))
        for name, (dates, equity) in curves.items():
            if len(equity) == 0:
                continue
            style = "--" if name.startswith("random_") else "-"
            ax.plot(dates.astype("datetime64[D]").astype(object), equity / equity[0], style, lw=1, label=name)
        for name, ret in (benchmarks or {}).items():
            ax.axhline(1 + ret, color="grey", lw=0.6, ls=":")
            ax.annotate(name, (0.01, 1 + ret), xycoords=("axes fraction", "data"), fontsize=6, color="grey")
        ax.set_ylabel("equity / initial")
        ax.legend(loc="best", ncol=1)
        fig.autofmt_xdate()
        return _save(fig, path)


def plot_training_history(histories: Mapping[str, Sequence[tuple[int, float, float]]], path: str | Path) -> Path:
    with plt.rc_context(RC):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(8, 3.2))
        for name, rows in histories.items():
            epochs = [r[0] for r in rows]
            ax_loss.plot(epochs, [r[1] for r in rows], label=name)
            ax_acc.plot(epochs, [r[2] for r in rows], label=name)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("weighted loss")
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("train accuracy")
        ax_loss.legend(loc="best")
        return _save(fig, path)


def plot_label_mix(stats: Mapping[str, Mapping[str, object]], path: str | Path, split: str = "train") -> Path:
    """Stacked rise/fall/side proportions per label spec for one split."""
    names = [n for n, per in stats.items() if split in per]
    rise = np.array([stats[n][split].rise_prop for n in names])
    fall = np.array([stats[n][split].fall_prop for n in names])
    side = np.array([stats[n][split].side_prop for n in names])
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4, 0.5 * len(names) + 2), 3.2))
        x = np.arange(len(names))
        ax.bar(x, rise, label="rise", color="tab:blue")
        ax.bar(x, fall, bottom=rise, label="fall", color="tab:red")
        ax.bar(x, side, bottom=rise + fall, label="side", color="tab:gray")
        ax.set_xticks(x, names, rotation=60, ha="right")
        ax.set_ylabel(f"{split} proportion")
        ax.legend(loc="lower right")
        return _save(fig, path)
