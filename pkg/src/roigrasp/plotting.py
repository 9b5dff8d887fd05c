"""Report figures: FPPI vs miss rate, and per-class precision/recall."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from roigrasp.metrics import LAMR_REFS, EvalReport  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.4,
    "svg.hashsalt": "roigrasp",
}

# PNG metadata otherwise carries the matplotlib version string
_META = {"Software": None}


def fppi_figure(reports: Dict[str, EvalReport], path, title: str = "FPPI vs miss rate"):
    """Log-log miss rate against FPPI, one line per labelled report."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.4))
        lo = LAMR_REFS[0]
        for label, rep in reports.items():
            pts = [p for p in rep.curve if math.isfinite(p.threshold)]
            if not pts:
                continue
            # step plot on log axes; clamp zero FPPI onto the left edge
            xs = [max(p.fppi, lo / 10) for p in reversed(pts)]
            ys = [max(p.miss_rate, 1e-3) for p in reversed(pts)]
            ax.step(xs, ys, where="post", label=f"{label} (LAMR {100 * rep.lamr:.1f}%)")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlim(lo / 10, 10.0)
        ax.set_ylim(1e-2, 1.05)
        ax.set_xlabel("false positives per image")
        ax.set_ylabel("miss rate")
        ax.set_title(title)
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(loc="lower left")
        fig.tight_layout()
        fig.savefig(path, dpi=120, metadata=_META)
        plt.close(fig)
    return Path(path)


def pr_figure(report: EvalReport, path, max_classes: int = 12):
    """Precision/recall curves of the classes with most detections."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 3.4))
        ranked = sorted(report.pr_curves.items(), key=lambda kv: (-len(kv[1][0]), kv[0]))
        for cat, (rec, prec) in ranked[:max_classes]:
            if len(rec) == 0:
                continue
            ax.plot(rec, prec, label=f"{cat} ({100 * report.per_class_ap[cat]:.0f})")
        ax.set_xlim(0.0, 1.0)
        ax.set_ylim(0.0, 1.05)
        ax.set_xlabel("recall")
        ax.set_ylabel("precision")
        ax.set_title(f"AP with grasp (mAP {100 * report.map:.1f}%)")
        ax.grid(True, alpha=0.3)
        if ranked:
            ax.legend(loc="lower left", ncol=2)
        fig.tight_layout()
        fig.savefig(path, dpi=120, metadata=_META)
        plt.close(fig)
    return Path(path)


def write_figures(report: EvalReport, out_dir, label: str = "detector") -> Sequence[Path]:
    out_dir = Path(out_dir)
    return [
        fppi_figure({label: report}, out_dir / "fppi_missrate.png"),
        pr_figure(report, out_dir / "precision_recall.png"),
    ]
