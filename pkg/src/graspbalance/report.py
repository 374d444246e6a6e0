"""Figure and table rendering for evaluation reports and scale histograms.

Everything here is presentation: the numbers come straight from EvalReport
and ScaleHistogram and are written twice, as CSV tables and as PNG charts.
Output is byte-stable for identical inputs: the Agg backend renders
off-screen, figure geometry and dpi are fixed, and the PNG metadata is
pinned so no timestamps leak into the files.
"""

import csv
import os
from typing import List

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .evaluation import EvalReport, ScaleClass
from .scale_balance import ScaleHistogram, sample_weight

_DPI = 100
_METADATA = {"Software": "graspbalance"}
_SCALE_ORDER = (ScaleClass.SMALL, ScaleClass.MEDIUM, ScaleClass.LARGE)
_SCALE_NAMES = tuple(c.value for c in _SCALE_ORDER)


def _save(fig, path: str) -> None:
    fig.savefig(path, dpi=_DPI, metadata=_METADATA)
    plt.close(fig)


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def render_report(report: EvalReport, out_dir, stem: str = "eval"
                  ) -> List[str]:
    """Write AP-by-friction, AP-by-scale, and per-scale-stats charts.

    Each chart gets a PNG and a CSV twin named <stem>_<facet>.<ext> inside
    out_dir.  Returns the written paths in a fixed order.
    """
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    mus = sorted(report.ap_by_mu)
    aps = [report.ap_by_mu[m] for m in mus]
    base = os.path.join(out_dir, f"{stem}_ap_by_mu")
    _write_csv(base + ".csv", ["mu", "ap"],
               [["%.17g" % m, "%.17g" % a] for m, a in zip(mus, aps)])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.bar([f"{m:.1f}" for m in mus], aps, color="#4878a8")
    ax.set_xlabel("friction coefficient")
    ax.set_ylabel("average precision")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(f"AP by friction (overall AP = {report.ap:.4f})")
    fig.tight_layout()
    _save(fig, base + ".png")
    paths += [base + ".csv", base + ".png"]

    scale_aps = [report.ap_by_scale[s] for s in _SCALE_ORDER]
    base = os.path.join(out_dir, f"{stem}_ap_by_scale")
    _write_csv(base + ".csv", ["scale", "ap"],
               [[s, "%.17g" % a] for s, a in zip(_SCALE_NAMES, scale_aps)])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.bar(_SCALE_NAMES, scale_aps,
           color=["#b05050", "#c8a028", "#508858"])
    ax.set_xlabel("grasp scale class")
    ax.set_ylabel("average precision")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("AP by grasp scale")
    fig.tight_layout()
    _save(fig, base + ".png")
    paths += [base + ".csv", base + ".png"]

    stats = [report.per_scale_stats[s] for s in _SCALE_ORDER]
    base = os.path.join(out_dir, f"{stem}_scale_stats")
    _write_csv(base + ".csv", ["scale", "count", "success_rate"],
               [[s, "%d" % st.count, "%.17g" % st.success_rate]
                for s, st in zip(_SCALE_NAMES, stats)])
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    bars = ax.bar(_SCALE_NAMES, [st.success_rate for st in stats],
                  color="#5878a0")
    for bar, st in zip(bars, stats):
        ax.annotate(f"n={st.count}",
                    (bar.get_x() + bar.get_width() / 2.0, bar.get_height()),
                    ha="center", va="bottom", fontsize=9)
    ax.set_xlabel("grasp scale class")
    ax.set_ylabel("success rate of top-10 per object")
    ax.set_ylim(0.0, 1.1)
    ax.set_title("Per-scale success of highest-scored grasps")
    fig.tight_layout()
    _save(fig, base + ".png")
    paths += [base + ".csv", base + ".png"]
    return paths


def render_histogram(hist: ScaleHistogram, out_dir, stem: str = "histogram"
                     ) -> List[str]:
    """Write the grasp-scale histogram and its loss weights as CSV + PNG."""
    if not hist.populated:
        raise ValueError("histogram has no mass; nothing to render")
    out_dir = os.fspath(out_dir)
    os.makedirs(out_dir, exist_ok=True)

    step = hist.w_max / hist.t
    lows = np.arange(hist.t) * step
    highs = lows + step
    centers = lows + step / 2.0
    weights = [sample_weight(hist, c) for c in centers]

    base = os.path.join(out_dir, f"{stem}_scale_bins")
    _write_csv(base + ".csv", ["bin_low", "bin_high", "count", "weight"],
               [["%.17g" % lo, "%.17g" % hi, "%.17g" % c, "%.17g" % w]
                for lo, hi, c, w in zip(lows, highs, hist.counts, weights)])

    fig, (ax_c, ax_w) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 5.0))
    ax_c.bar(centers, hist.counts, width=step * 0.9, color="#4878a8")
    ax_c.set_ylabel("grasp count")
    ax_c.set_title("Grasp-scale distribution and loss weights")
    ax_w.plot(centers, weights, marker="o", color="#b05050")
    ax_w.set_xlabel("grasp width (m)")
    ax_w.set_ylabel("loss weight")
    fig.tight_layout()
    _save(fig, base + ".png")
    return [base + ".csv", base + ".png"]
