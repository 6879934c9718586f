"""Procedural paired-slide corpus for desk-scale end-to-end runs.

Renders registered "faux tissue" pairs: gland-like ellipses with nuclei dots
and fibrous stroma on a white background. The stained rendering colors each
structure from a fixed palette (nuclei dark blue-purple, cytoplasm and
stroma shades of pink); the nonstained rendering draws the same geometry as
faint near-gray shapes on white, mimicking the translucency of an unstained
paraffin section. Both renderings are deterministic functions of the seed
and derive from one shared class map, so they are pixel-registered by
construction and the stain transform is invertible up to palette lookup.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import images, metrics
from .errors import DataError
from .patches import SlidePairRecord, split_manifest, write_manifest
from .stitching import StitchPlan, infer_slide

log = logging.getLogger("stainlab.synth")

# structure classes in the shared geometry map
BACKGROUND, STROMA, CYTOPLASM, NUCLEUS = 0, 1, 2, 3

# committed palette; metric baselines depend on these exact values
STAIN_PALETTE = {
    BACKGROUND: (1.000, 1.000, 1.000),
    STROMA: (0.894, 0.588, 0.702),   # eosin pink, fibrous
    CYTOPLASM: (0.941, 0.753, 0.827),  # eosin pink, pale
    NUCLEUS: (0.231, 0.169, 0.510),  # hematoxylin blue-purple
}

# relative darkening of the translucent nonstained rendering per class
NONSTAINED_STRENGTH = {
    BACKGROUND: 0.0,
    STROMA: 0.55,
    CYTOPLASM: 0.35,
    NUCLEUS: 1.0,
}


@dataclass
class SynthConfig:
    seed: int = 0
    slide_size: int = 512
    n_glands: int = 6
    n_nuclei_per_gland: int = 26
    n_stroma_fibers: int = 14
    translucency: float = 0.18


def _fill_ellipse(cls_map: np.ndarray, cx, cy, ax, ay, angle, value: int) -> None:
    h, w = cls_map.shape
    yy, xx = np.mgrid[0:h, 0:w]
    dx, dy = xx - cx, yy - cy
    c, s = np.cos(angle), np.sin(angle)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    cls_map[(u / ax) ** 2 + (v / ay) ** 2 <= 1.0] = value


def _fill_segment(cls_map: np.ndarray, p0, p1, width, value: int) -> None:
    h, w = cls_map.shape
    yy, xx = np.mgrid[0:h, 0:w]
    d = p1 - p0
    norm2 = float(d @ d)
    if norm2 == 0.0:
        return
    t = np.clip(((xx - p0[0]) * d[0] + (yy - p0[1]) * d[1]) / norm2, 0.0, 1.0)
    dist2 = (xx - (p0[0] + t * d[0])) ** 2 + (yy - (p0[1] + t * d[1])) ** 2
    cls_map[dist2 <= width**2] = value


def generate_class_map(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Shared geometry: 0=background, 1=stroma, 2=gland cytoplasm, 3=nucleus."""
    s = cfg.slide_size
    cls_map = np.zeros((s, s), dtype=np.uint8)

    for _ in range(cfg.n_stroma_fibers):
        p0 = rng.uniform(0, s, size=2)
        p1 = p0 + rng.uniform(-s / 2, s / 2, size=2)
        _fill_segment(cls_map, p0, p1, rng.uniform(2.0, 5.0), STROMA)

    for _ in range(cfg.n_glands):
        cx, cy = rng.uniform(0.1 * s, 0.9 * s, size=2)
        ax = rng.uniform(0.07 * s, 0.16 * s)
        ay = rng.uniform(0.07 * s, 0.16 * s)
        angle = rng.uniform(0, np.pi)
        _fill_ellipse(cls_map, cx, cy, ax, ay, angle, CYTOPLASM)
        _fill_ellipse(cls_map, cx, cy, 0.45 * ax, 0.45 * ay, angle, BACKGROUND)  # lumen
        # nuclei ring between lumen and gland boundary
        for _ in range(cfg.n_nuclei_per_gland):
            theta = rng.uniform(0, 2 * np.pi)
            rad = rng.uniform(0.55, 0.9)
            nx = cx + rad * ax * np.cos(theta) * np.cos(angle) - rad * ay * np.sin(theta) * np.sin(angle)
            ny = cy + rad * ax * np.cos(theta) * np.sin(angle) + rad * ay * np.sin(theta) * np.cos(angle)
            _fill_ellipse(cls_map, nx, ny, rng.uniform(1.5, 3.0), rng.uniform(1.5, 3.0), 0.0, NUCLEUS)

    return cls_map


def render_stained(cls_map: np.ndarray) -> np.ndarray:
    palette = np.array([STAIN_PALETTE[k] for k in range(4)], dtype=np.float32)
    return palette[cls_map]


def render_nonstained(cls_map: np.ndarray, translucency: float) -> np.ndarray:
    strength = np.array([NONSTAINED_STRENGTH[k] for k in range(4)], dtype=np.float32)
    gray = 1.0 - np.float32(translucency) * strength[cls_map]
    return np.repeat(gray[:, :, None], 3, axis=2)


def generate_pair(cfg: SynthConfig) -> tuple[np.ndarray, np.ndarray]:
    """(nonstained, stained) float32 renderings in [0, 1], bit-identical per seed."""
    rng = np.random.default_rng(cfg.seed)
    cls_map = generate_class_map(cfg, rng)
    return render_nonstained(cls_map, cfg.translucency), render_stained(cls_map)


def generate_corpus(
    out_dir: str | os.PathLike,
    seed: int,
    n_slides: int,
    slide_size: int = 512,
    train_count: int | None = None,
    n_glands: int = 6,
    n_stroma_fibers: int = 14,
) -> Path:
    """Write ``n_slides`` slide pairs plus a split manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if train_count is None:
        train_count = n_slides - max(1, n_slides // 4)
    records = []
    for i in range(n_slides):
        cfg = SynthConfig(
            seed=int(np.random.SeedSequence([seed, i]).generate_state(1)[0]),
            slide_size=slide_size,
            n_glands=n_glands,
            n_stroma_fibers=n_stroma_fibers,
        )
        nonstained, stained = generate_pair(cfg)
        slide_id = f"synth{i:03d}"
        non_rel, sta_rel = f"{slide_id}_nonstained.png", f"{slide_id}_stained.png"
        images.save_rgb(out_dir / non_rel, nonstained)
        images.save_rgb(out_dir / sta_rel, stained)
        records.append(SlidePairRecord(slide_id, non_rel, sta_rel))
    records = split_manifest(records, train_count=train_count, seed=seed)
    manifest = out_dir / "manifest.jsonl"
    write_manifest(manifest, records)
    log.info("synthesized %d slide pairs (%d train) under %s", n_slides, train_count, out_dir)
    return manifest


def run_cycle_benchmark(
    records: list[SlidePairRecord],
    stain_model,
    destain_model,
    secondary_model,
    plan: StitchPlan,
    out_dir: str | os.PathLike | None = None,
) -> dict:
    """Slide-level staining and destain->restain evaluation on the val split.

    Runs (i) the staining model on held-out nonstained slides against the
    stained ground truth and (ii) the destain -> secondary-restain cycle
    against the same ground truth. Returns {"staining": ..., "cycle": ...}
    metric reports; intermediate slide renderings are written under
    ``out_dir`` when given.
    """
    for name, model in (("stain", stain_model), ("destain", destain_model), ("secondary", secondary_model)):
        if model is None:
            raise DataError(f"missing {name} model/checkpoint for the cycle benchmark")
    val = [r for r in records if r.split == "val"]
    if not val:
        raise DataError("no val slides in manifest")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    staining_entries = []
    cycle_entries = []
    for rec in val:
        nonstained = images.load_rgb(rec.nonstained_path)
        stained = images.load_rgb(rec.stained_path)
        gen_stained = infer_slide(stain_model, nonstained, plan)
        destained = infer_slide(destain_model, stained, plan)
        restained = infer_slide(secondary_model, destained, plan)
        if out_dir is not None:
            images.save_rgb(out_dir / f"{rec.slide_id}_generated_stained.png", gen_stained)
            images.save_rgb(out_dir / f"{rec.slide_id}_destained.png", destained)
            images.save_rgb(out_dir / f"{rec.slide_id}_restained.png", restained)
        staining_entries.append(
            (rec.slide_id, 0, 0, images.u8_to_unit(gen_stained), images.u8_to_unit(stained))
        )
        cycle_entries.append(
            (rec.slide_id, 0, 0, images.u8_to_unit(restained), images.u8_to_unit(stained))
        )
        log.info("cycle benchmark: slide %s done", rec.slide_id)

    result = {
        "staining": metrics.evaluate_arrays(staining_entries),
        "cycle": metrics.evaluate_arrays(cycle_entries),
    }
    if out_dir is not None:
        payload = {k: v.to_dict() for k, v in result.items()}
        (out_dir / "cycle_report.json").write_text(json.dumps(payload, indent=2) + "\n")
    return result
