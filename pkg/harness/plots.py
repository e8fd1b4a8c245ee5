from typing import Dict, Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from numpy.typing import NDArray  # noqa: E402


def plot_curves(curves: pd.DataFrame, save_fig: str, title: str = "Training curves"):
    """Per-epoch train/val/test DSC with the train-test gap on a twin axis."""
    fig, ax = plt.subplots(figsize=(10, 5))
    for column in ("train_dsc", "val_dsc", "test_dsc"):
        if column in curves:
            ax.plot(curves["epoch"], curves[column], linewidth=2, label=column.replace("_dsc", ""))
    ax.set_xlabel("Epoch", fontsize=14)
    ax.set_ylabel("DSC", fontsize=14)
    ax.grid(True, linestyle="--", alpha=0.7)
    gap_ax = ax.twinx()
    gap_ax.plot(curves["epoch"], curves["gap"], color="black", linestyle=":", label="gap (train - test)")
    gap_ax.set_ylabel("Gap", fontsize=14)
    lines = ax.get_legend_handles_labels()
    gap_lines = gap_ax.get_legend_handles_labels()
    ax.legend(lines[0] + gap_lines[0], lines[1] + gap_lines[1], loc="best")
    ax.set_title(title, fontsize=16)
    fig.tight_layout()
    fig.savefig(save_fig)
    plt.close(fig)


def plot_gap_curves(curves: Dict[str, pd.DataFrame], save_fig: str):
    """Gap per epoch of every arm, averaged over seeds."""
    fig, ax = plt.subplots(figsize=(10, 5))
    for arm, frame in curves.items():
        mean = frame.groupby("epoch")["gap"].mean()
        ax.plot(mean.index, mean.values, linewidth=2, label=arm)
    ax.set_xlabel("Epoch", fontsize=14)
    ax.set_ylabel("DSC gap (train - test)", fontsize=14)
    ax.axhline(0.0, color="grey", linewidth=1)
    ax.grid(True, linestyle="--", alpha=0.7)
    ax.legend(loc="best")
    fig.tight_layout()
    fig.savefig(save_fig)
    plt.close(fig)


def plot_sweep(sweep: pd.DataFrame, save_fig: str, which: str):
    fig, (dsc_ax, tre_ax) = plt.subplots(1, 2, figsize=(12, 5))
    summary = sweep.groupby("size").agg(dsc=("DSC", "mean"), dsc_std=("DSC", "std"),
                                        tre=("TRE", "mean"), tre_std=("TRE", "std")).fillna(0.0)
    dsc_ax.errorbar(summary.index, summary["dsc"], yerr=summary["dsc_std"], marker="o", capsize=4)
    tre_ax.errorbar(summary.index, summary["tre"], yerr=summary["tre_std"], marker="o", capsize=4, color="tab:red")
    for ax, label in ((dsc_ax, "Test DSC"), (tre_ax, "Test TRE (mm)")):
        ax.set_xscale("log", base=2)
        ax.set_xticks(summary.index)
        ax.set_xticklabels([str(int(s)) for s in summary.index])
        ax.set_xlabel(f"Dictionary size ({which})", fontsize=14)
        ax.set_ylabel(label, fontsize=14)
        ax.grid(True, linestyle="--", alpha=0.7)
    fig.tight_layout()
    fig.savefig(save_fig)
    plt.close(fig)


def plot_usage(histograms: Dict[str, NDArray], save_fig: str, title: Optional[str] = None):
    """Code-usage histogram per quantizer, codes sorted by frequency."""
    if not histograms:
        return
    fig, axes = plt.subplots(1, len(histograms), figsize=(5 * len(histograms), 4), squeeze=False)
    for ax, (name, counts) in zip(axes[0], histograms.items()):
        counts = np.sort(np.asarray(counts))[::-1]
        ax.bar(np.arange(len(counts)), counts, width=1.0)
        dead = int((counts == 0).sum())
        ax.set_title(f"{name} ({dead}/{len(counts)} unused)", fontsize=12)
        ax.set_xlabel("Code (sorted by usage)")
        ax.set_ylabel("Assignments")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(save_fig)
    plt.close(fig)
