"""Optional SVG rendering of interval bands and variance flags.

Everything drawn here comes from the report's data files; nothing else
depends on these figures.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


def plot_windows(pred: dict, y, flagged: set, windows, out_dir: Path, target: str, level: float) -> list[str]:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        return []
    depth = pred["depth_index"]
    paths = []
    for lo, hi in windows:
        sel = (depth >= lo) & (depth <= hi)
        if not sel.any():
            continue
        d = depth[sel]
        fig, axes = plt.subplots(2, 1, figsize=(10, 6), sharex=True, gridspec_kw={"height_ratios": [3, 1]})
        ax = axes[0]
        if "ci_lo" in pred:
            ax.fill_between(d, pred["ci_lo"][sel], pred["ci_hi"][sel], color="0.85", label=f"{level:.0%} interval")
        ax.plot(d, pred["mu"][sel], lw=0.8, label="predicted mean")
        if y is not None:
            ax.scatter(d, y[sel], s=2, c="k", label="measured")
        ax.set_ylabel(target)
        ax.legend(loc="upper right", fontsize="small")
        if "sigma" in pred:
            axes[1].plot(d, pred["sigma"][sel], lw=0.8)
            marks = np.array([int(v) in flagged for v in d])
            if marks.any():
                axes[1].scatter(d[marks], pred["sigma"][sel][marks], s=6, c="r", label="flagged")
                axes[1].legend(loc="upper right", fontsize="small")
            axes[1].set_ylabel("sigma")
        axes[1].set_xlabel("depth index")
        path = Path(out_dir) / f"window_{target}_{lo}_{hi}.svg"
        fig.savefig(path, format="svg")
        plt.close(fig)
        paths.append(str(path))
    return paths
