"""SSIM and Pearson correlation between generated and target images.

SSIM follows the canonical windowed form: an 11x11 Gaussian window with
sigma 1.5, stabilizers K1=0.01 / K2=0.03 at dynamic range 1.0, evaluated
per channel over every fully-inside window position and averaged. Pearson
correlation reuses the shared definition from the loss module so training
and evaluation cannot drift apart.
"""

from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

from . import images
from .errors import ContractError, DataError
from .losses import pearson_cc

log = logging.getLogger("stainlab.metrics")

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """1-D Gaussian kernel normalized to sum 1 (outer product gives the 2-D window)."""
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(r**2) / (2.0 * sigma**2))
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Gaussian-weighted local means on all fully-inside window positions."""
    r = kernel.size // 2
    out = correlate1d(img, kernel, axis=0, mode="constant")
    out = correlate1d(out, kernel, axis=1, mode="constant")
    return out[r:-r, r:-r]


def _ssim_map_single(a: np.ndarray, b: np.ndarray, kernel: np.ndarray, data_range: float) -> np.ndarray:
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _windowed_mean(a, kernel)
    mu_b = _windowed_mean(b, kernel)
    var_a = _windowed_mean(a * a, kernel) - mu_a * mu_a
    var_b = _windowed_mean(b * b, kernel) - mu_b * mu_b
    cov = _windowed_mean(a * b, kernel) - mu_a * mu_b
    return ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / (
        (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    )


def ssim(
    a: np.ndarray,
    b: np.ndarray,
    window_size: int = SSIM_WINDOW,
    sigma: float = SSIM_SIGMA,
    data_range: float = 1.0,
) -> float:
    """Mean SSIM between two images in [0, 1] (HxW or HxWxC, same shape)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"ssim: shape mismatch {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.ndim != 3:
        raise ContractError(f"ssim expects HxW or HxWxC arrays, got ndim={a.ndim}")
    if min(a.shape[0], a.shape[1]) < window_size:
        raise ContractError(
            f"image {a.shape[0]}x{a.shape[1]} smaller than the {window_size}x{window_size} window"
        )
    kernel = gaussian_window(window_size, sigma)
    per_channel = [
        _ssim_map_single(a[:, :, c], b[:, :, c], kernel, data_range).mean()
        for c in range(a.shape[2])
    ]
    return float(np.mean(per_channel))


# --------------------------------------------------------------------------
# Reports
# --------------------------------------------------------------------------

@dataclass
class PatchMetrics:
    slide_id: str
    x0: int
    y0: int
    ssim: float
    cc: float


@dataclass
class MetricsReport:
    per_patch: list[PatchMetrics] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    @property
    def aggregate(self) -> dict:
        if not self.per_patch:
            return {"mean_ssim": float("nan"), "mean_cc": float("nan"), "count": 0}
        return {
            "mean_ssim": float(np.mean([p.ssim for p in self.per_patch])),
            "mean_cc": float(np.mean([p.cc for p in self.per_patch])),
            "count": len(self.per_patch),
        }

    def to_dict(self) -> dict:
        return {
            "per_patch": [vars(p) for p in self.per_patch],
            "aggregate": self.aggregate,
            "missing": list(self.missing),
        }

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")


_NAME_RE = re.compile(r"^(?P<slide>.+)_x(?P<x0>\d+)_y(?P<y0>\d+)")


def _parse_patch_name(name: str) -> tuple[str, int, int]:
    m = _NAME_RE.match(Path(name).stem)
    if m:
        return m.group("slide"), int(m.group("x0")), int(m.group("y0"))
    return Path(name).stem, 0, 0


def score_pair(generated: np.ndarray, target: np.ndarray) -> tuple[float, float]:
    """(ssim, pearson_cc) for one generated/target pair in [0, 1]."""
    s = ssim(generated, target)
    cc = pearson_cc(
        np.asarray(generated, dtype=np.float64), np.asarray(target, dtype=np.float64)
    )
    return s, float(cc)


def evaluate_arrays(
    entries: list[tuple[str, int, int, np.ndarray, np.ndarray]]
) -> MetricsReport:
    """Score (slide_id, x0, y0, generated, target) entries already in memory."""
    report = MetricsReport()
    for slide_id, x0, y0, generated, target in entries:
        s, cc = score_pair(generated, target)
        report.per_patch.append(PatchMetrics(slide_id, x0, y0, s, cc))
    return report


def evaluate(
    generated_dir: str | os.PathLike,
    target_dir: str | os.PathLike,
    index: list[dict] | None = None,
) -> MetricsReport:
    """Pair generated patches with targets and score each pair.

    Pairs by identical filename unless an index of
    ``{generated_png, target_png, slide_id, x0, y0}`` rows is given.
    Files without a counterpart are listed in the report and excluded from
    the aggregates.
    """
    generated_dir = Path(generated_dir)
    target_dir = Path(target_dir)
    if not generated_dir.is_dir():
        raise DataError(f"generated dir not found: {generated_dir}")
    if not target_dir.is_dir():
        raise DataError(f"target dir not found: {target_dir}")

    report = MetricsReport()
    if index is None:
        gen_names = {p.name for p in generated_dir.glob("*.png")}
        tgt_names = {p.name for p in target_dir.glob("*.png")}
        for name in sorted(gen_names - tgt_names):
            report.missing.append(f"no target for {name}")
        for name in sorted(tgt_names - gen_names):
            report.missing.append(f"no generated output for {name}")
        pairs = [
            (name, generated_dir / name, target_dir / name, *_parse_patch_name(name))
            for name in sorted(gen_names & tgt_names)
        ]
    else:
        pairs = []
        for row in index:
            gen = generated_dir / row["generated_png"]
            tgt = target_dir / row["target_png"]
            if not gen.exists():
                report.missing.append(f"no generated output {gen.name}")
                continue
            if not tgt.exists():
                report.missing.append(f"no target {tgt.name}")
                continue
            pairs.append(
                (gen.name, gen, tgt, row["slide_id"], int(row.get("x0", 0)), int(row.get("y0", 0)))
            )

    for _, gen_path, tgt_path, slide_id, x0, y0 in pairs:
        generated = images.load_unit_rgb(gen_path)
        target = images.load_unit_rgb(tgt_path)
        s, cc = score_pair(generated, target)
        report.per_patch.append(PatchMetrics(slide_id, x0, y0, s, cc))
    if report.missing:
        log.warning("%d patches had no counterpart and were excluded", len(report.missing))
    return report


def tile_boundary_discontinuity(output: np.ndarray, target: np.ndarray, tile: int) -> float:
    """Mean absolute inter-tile boundary discontinuity, in excess of the target's.

    For every seam produced by non-overlapping ``tile``-sized tiling, takes
    the signed jump across the seam (pixel on one side minus pixel on the
    other) in both images and averages |jump_output - jump_target|. A
    seam-free reconstruction scores 0 regardless of true edges lying on the
    seam, so the number isolates stitching artifacts from image content.
    """
    out = np.asarray(output, dtype=np.float64)
    tgt = np.asarray(target, dtype=np.float64)
    if out.shape != tgt.shape:
        raise ContractError(f"shape mismatch {out.shape} vs {tgt.shape}")
    h, w = out.shape[:2]
    diffs = []
    for c in range(tile, w, tile):
        jump_out = out[:, c] - out[:, c - 1]
        jump_tgt = tgt[:, c] - tgt[:, c - 1]
        diffs.append(np.abs(jump_out - jump_tgt).ravel())
    for r in range(tile, h, tile):
        jump_out = out[r, :] - out[r - 1, :]
        jump_tgt = tgt[r, :] - tgt[r - 1, :]
        diffs.append(np.abs(jump_out - jump_tgt).ravel())
    if not diffs:
        return 0.0
    return float(np.concatenate(diffs).mean())
