"""Desk-scale learning benchmark on the committed synthetic corpus.

Trains two small staining models on the same fixed-seed synthetic corpus,
one with the full objective and one with the correlation term ablated
(adversarial + L1 only), then scores held-out patches (SSIM) and stitched
held-out slides (inter-tile boundary discontinuity). The committed
constants below define the corpus and model so the resulting numbers are a
stable baseline; ``benchmarks/desk_scale_baseline.json`` in the repo holds
one recorded run.
"""

from __future__ import annotations

import json
import logging
import os
import time
from pathlib import Path

from . import images, report
from .metrics import tile_boundary_discontinuity
from .patches import ExtractionConfig, extract_manifest, read_manifest
from .stitching import StitchPlan, infer_slide
from .synth import generate_corpus
from .trainer import PatchDataset, TrainConfig, Trainer, load_generator

log = logging.getLogger("stainlab.benchmark")

DESK_SEED = 20180
DESK_SLIDES = 6
DESK_SLIDE_SIZE = 256
DESK_TRAIN_COUNT = 4
DESK_PATCH_SIZE = 64
DESK_STRIDE = 32
DESK_EPOCHS = 10


def desk_train_config(gamma_cc: float, seed: int = DESK_SEED, epochs: int = DESK_EPOCHS) -> TrainConfig:
    return TrainConfig(
        direction="stain",
        epochs=epochs,
        batch_size=1,
        seed=seed,
        checkpoint_every=0,
        alpha=1.0,
        lambda_l1=100.0,
        gamma_cc=gamma_cc,
        input_size=DESK_PATCH_SIZE,
        g_base_channels=16,
        g_max_channels=256,
        d_base_channels=16,
    )


def run_desk_benchmark(
    work_dir: str | os.PathLike,
    seed: int = DESK_SEED,
    epochs: int = DESK_EPOCHS,
) -> dict:
    """Full-objective vs ablation comparison; returns the recorded result dict."""
    work_dir = Path(work_dir)
    work_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    manifest_path = generate_corpus(
        work_dir / "corpus", seed=seed, n_slides=DESK_SLIDES,
        slide_size=DESK_SLIDE_SIZE, train_count=DESK_TRAIN_COUNT,
    )
    records = read_manifest(manifest_path)
    extract_cfg = ExtractionConfig(patch_size=DESK_PATCH_SIZE, stride=DESK_STRIDE)
    extract_manifest(records, extract_cfg, work_dir / "patches")
    dataset = PatchDataset(work_dir / "patches")
    n_train = len(dataset.split_rows("train"))
    n_val = len(dataset.split_rows("val"))
    log.info("desk corpus: %d train / %d val patches", n_train, n_val)

    results: dict = {
        "seed": seed,
        "epochs": epochs,
        "corpus": {
            "slides": DESK_SLIDES,
            "slide_size": DESK_SLIDE_SIZE,
            "patch_size": DESK_PATCH_SIZE,
            "stride": DESK_STRIDE,
            "train_patches": n_train,
            "val_patches": n_val,
        },
        "models": {},
    }

    checkpoints = {}
    for name, gamma in (("full", 10.0), ("ablation", 0.0)):
        cfg = desk_train_config(gamma, seed=seed, epochs=epochs)
        trainer = Trainer(cfg)
        ckpt = trainer.run(dataset, work_dir / f"model_{name}")
        checkpoints[name] = ckpt
        val = trainer.validate(dataset)
        results["models"][name] = {"gamma_cc": gamma, "val": val}
        report.loss_curves_figure(
            work_dir / f"model_{name}" / "loss_log.jsonl",
            work_dir / f"model_{name}" / "loss_curves.png",
        )
        log.info("model %s: val ssim=%.4f cc=%.4f", name, val["mean_ssim"], val["mean_cc"])

    # seam scores on stitched held-out slides, non-overlapping tiles
    plan = StitchPlan(tile_size=DESK_PATCH_SIZE, stride=DESK_PATCH_SIZE)
    val_records = [r for r in records if r.split == "val"]
    for name, ckpt in checkpoints.items():
        model = load_generator(ckpt)
        seams = []
        for rec in val_records:
            nonstained = images.load_rgb(rec.nonstained_path)
            stained = images.load_unit_rgb(rec.stained_path)
            out = infer_slide(model, nonstained, plan)
            out_path = work_dir / f"model_{name}" / f"{rec.slide_id}_stitched.png"
            images.save_rgb(out_path, out)
            seams.append(
                tile_boundary_discontinuity(images.u8_to_unit(out), stained, DESK_PATCH_SIZE)
            )
        results["models"][name]["tiling_artifact"] = sum(seams) / len(seams)
        results["models"][name]["tiling_artifact_per_slide"] = seams

    results["runtime_seconds"] = round(time.time() - t0, 1)
    out_json = work_dir / "desk_benchmark.json"
    out_json.write_text(json.dumps(results, indent=2) + "\n")
    log.info(
        "desk benchmark done in %.0fs: full ssim=%.4f seam=%.5f | ablation ssim=%.4f seam=%.5f",
        results["runtime_seconds"],
        results["models"]["full"]["val"]["mean_ssim"],
        results["models"]["full"]["tiling_artifact"],
        results["models"]["ablation"]["val"]["mean_ssim"],
        results["models"]["ablation"]["tiling_artifact"],
    )
    return results
