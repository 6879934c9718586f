"""Figure and delimited-output rendering for the reporting paths.

Commands that produce reports also render matplotlib figures next to the
JSON so a run can be inspected without further tooling: loss curves for
training, metric distributions for evaluation, and side-by-side slide
strips for the cycle harness. Per-patch metrics additionally go to a CSV.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsReport


def write_metrics_csv(report: MetricsReport, path: str | os.PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["slide_id", "x0", "y0", "ssim", "cc"])
        for p in report.per_patch:
            writer.writerow([p.slide_id, p.x0, p.y0, f"{p.ssim:.6f}", f"{p.cc:.6f}"])
    return path


def loss_curves_figure(loss_log_path: str | os.PathLike, out_png: str | os.PathLike) -> Path:
    rows = [
        json.loads(line)
        for line in Path(loss_log_path).read_text().splitlines()
        if line.strip()
    ]
    out_png = Path(out_png)
    steps = [r["step"] for r in rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    ax1.plot(steps, [r["g_total"] for r in rows], label="g_total", lw=0.8)
    ax1.plot(steps, [r["d_loss"] for r in rows], label="d_loss", lw=0.8)
    ax1.set_ylabel("loss")
    ax1.legend(loc="upper right")
    ax2.plot(steps, [r["g_adv"] for r in rows], label="g_adv", lw=0.8)
    ax2.plot(steps, [r["g_l1"] for r in rows], label="g_l1", lw=0.8)
    ax2.plot(steps, [r["g_cc_penalty"] for r in rows], label="g_cc_penalty", lw=0.8)
    ax2.set_xlabel("step")
    ax2.set_ylabel("component")
    ax2.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def metrics_figure(report: MetricsReport, out_png: str | os.PathLike, title: str = "") -> Path:
    out_png = Path(out_png)
    ssims = [p.ssim for p in report.per_patch]
    ccs = [p.cc for p in report.per_patch]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, values, name in ((ax1, ssims, "SSIM"), (ax2, ccs, "Pearson CC")):
        if values:
            ax.hist(values, bins=min(30, max(5, len(values))), color="#4878a8")
            ax.axvline(float(np.mean(values)), color="k", ls="--", lw=1)
        ax.set_xlabel(name)
        ax.set_ylabel("patches")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def slide_strip_figure(
    panels: list[tuple[str, np.ndarray]], out_png: str | os.PathLike
) -> Path:
    """One row of labeled images (e.g. input / generated / ground truth)."""
    out_png = Path(out_png)
    n = max(1, len(panels))
    fig, axes = plt.subplots(1, n, figsize=(3 * n, 3.2))
    if n == 1:
        axes = [axes]
    for ax, (label, img) in zip(axes, panels):
        ax.imshow(img, interpolation="nearest")
        ax.set_title(label, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png
