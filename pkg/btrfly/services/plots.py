# btrfly/services/plots.py
import logging
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from btrfly.schemas.report import DistanceRow, ThresholdRow  # noqa: E402

logger = logging.getLogger(__name__)

F1_ISOLINES = (0.2, 0.4, 0.6, 0.8)
FORMATS = ("png", "svg")


def _save(fig, stem: Path) -> list[Path]:
    stem.parent.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in FORMATS:
        path = stem.with_suffix(f".{fmt}")
        fig.savefig(path, dpi=150, bbox_inches="tight")
        paths.append(path)
    plt.close(fig)
    logger.info("Wrote %s", ", ".join(str(p) for p in paths))
    return paths


def plot_pr_curve(rows: Sequence[ThresholdRow], stem: Path, best: Optional[ThresholdRow] = None) -> list[Path]:
    """Precision against recall over the threshold sweep, with F1 isolines"""
    fig, ax = plt.subplots(figsize=(5, 5))
    recall = np.linspace(0.01, 1.0, 200)
    for f1 in F1_ISOLINES:
        precision = f1 * recall / (2 * recall - f1)
        valid = (precision > 0) & (precision <= 1)
        ax.plot(recall[valid], precision[valid], color="0.8", linewidth=0.8)
        ax.annotate(f"F1={f1:.1f}", (recall[valid][-1], precision[valid][-1]), fontsize=7, color="0.5")
    ax.plot([r.recall for r in rows], [r.precision for r in rows], marker="o")
    for row in rows:
        ax.annotate(f"{row.threshold:.1f}", (row.recall, row.precision), fontsize=7, xytext=(3, 3), textcoords="offset points")
    if best is not None:
        ax.plot(best.recall, best.precision, marker="*", markersize=12, color="tab:red", label=f"T={best.threshold:.2f}")
        ax.legend(loc="lower left")
    ax.set(xlim=(0, 1.02), ylim=(0, 1.02), xlabel="Recall", ylabel="Precision", title="Precision-recall over T")
    return _save(fig, Path(stem))


def plot_dth_curves(rows: Sequence[DistanceRow], stem: Path) -> list[Path]:
    """Id rate against the distance threshold, one curve per region"""
    fig, ax = plt.subplots(figsize=(6, 4))
    groups = sorted({key for row in rows for key in row.id_rate})
    d_th = [row.d_th for row in rows]
    for group in groups:
        ax.plot(d_th, [row.id_rate.get(group, np.nan) for row in rows], marker="o", label=group)
    ax.set(xlabel="d_th (mm)", ylabel="Id. rate (%)", ylim=(0, 101), title="Identification rate over d_th")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, Path(stem))
