#!/usr/bin/env python3

"""
Module: plots.py

  Figures for AMEAN runs: loss curves per variant and the k-sweep bar chart.
"""
from pathlib import Path
import sys
from typing import Dict

try:
    import matplotlib as mpl
    mpl.use("Agg")
    import matplotlib.pyplot as plt
    import pandas as pd
    import seaborn as sns
except ImportError as e:
    print("Oops! Forgot to activate an appropriate environment?\n", e)
    sys.exit(1)


plt.ioff()


CURVES_SIZE = (12, 5)
SMOOTH_WINDOW = 50


def loss_curves(histories: Dict[str, pd.DataFrame], out_dir: Path,
                save_name: str = "loss_curves.png", show: bool = False,
                window: int = SMOOTH_WINDOW) -> Path:
    """Plot the V_st and V_mt columns of each history, smoothed by a rolling mean.
    Args:
     - histories (dict): label -> TrainHistory frame (one per variant or seed).
    """
    fig, axes = plt.subplots(1, 2, figsize=CURVES_SIZE, sharex=True)
    fs = 12
    for ax, col, title in zip(axes, ("v_st", "v_mt"), ("$V_{st}$", "$V_{mt}$")):
        for label, df in histories.items():
            if df[col].isna().all():
                continue
            smooth = df[col].rolling(window, min_periods=1).mean()
            sns.lineplot(x=df["iteration"], y=smooth, ax=ax, label=label)
        ax.set_title(title, fontsize=fs)
        ax.set_xlabel("Iteration", fontsize=fs)
        ax.set_ylabel("Loss", fontsize=fs)
        if ax.get_legend() is not None:
            ax.legend(fontsize="small")

    fig_fp = Path(out_dir).joinpath(save_name)
    fig.savefig(fig_fp, dpi=150, bbox_inches="tight")
    if show:
        plt.show()
    else:
        plt.close(fig)

    return fig_fp


def k_sweep_bars(table: pd.DataFrame, out_dir: Path, save_name: str = "k_sweep.png",
                 true_k: int = None, show: bool = False) -> Path:
    """Bar chart of mean Acc_BTDA (+/- std) against the number of meta-sub-targets k."""
    fig, ax = plt.subplots(figsize=(7, 5))
    fs = 12
    colors = ["indigo" if k == true_k else "lightsteelblue" for k in table["k"]]
    ax.bar(table["k"].astype(str), table["acc_btda_mean"], yerr=table["acc_btda_std"],
           color=colors, capsize=4)
    ax.set_xlabel("k (meta-sub-targets)", fontsize=fs)
    ax.set_ylabel("Acc$_{BTDA}$", fontsize=fs)
    low = max(0.0, float((table["acc_btda_mean"] - table["acc_btda_std"]).min()) - 0.05)
    ax.set_ylim(low, 1.0)
    sns.despine(ax=ax)

    fig_fp = Path(out_dir).joinpath(save_name)
    fig.savefig(fig_fp, dpi=150, bbox_inches="tight")
    if show:
        plt.show()
    else:
        plt.close(fig)

    return fig_fp
