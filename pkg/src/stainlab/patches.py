"""Paired patch extraction from registered whole-slide RGB image pairs.

Whole slides are far too large to feed to a network directly, so training
data is cut into fixed-size patch pairs by a sliding window over each
registered nonstained/stained pair:

  1) enumerate window offsets on a fixed stride grid,
  2) cut both slides at identical coordinates,
  3) drop near-empty background windows (whiteness test on the stained side),
  4) split by slide, never by patch, so validation slides stay unseen.

Patches are stored as 8-bit PNG pairs plus a JSON-lines index so the output
is lossless, inspectable, and streamable.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import images
from .errors import ConfigError, DataError

log = logging.getLogger("stainlab.patches")

TISSUE_WHITENESS_THRESHOLD = 0.9  # per-channel brightness above which a pixel is background


@dataclass(frozen=True)
class SlidePairRecord:
    """One registered nonstained/stained whole-slide pair in a manifest."""

    slide_id: str
    nonstained_path: str
    stained_path: str
    split: str | None = None  # "train" | "val" | None (unassigned)

    def resolved(self, root: Path) -> "SlidePairRecord":
        """Resolve relative image paths against the manifest directory."""
        def resolve(p: str) -> str:
            path = Path(p)
            return str(path if path.is_absolute() else root / path)

        return replace(
            self,
            nonstained_path=resolve(self.nonstained_path),
            stained_path=resolve(self.stained_path),
        )


@dataclass
class ExtractionConfig:
    patch_size: int = 1024
    stride: int | None = None  # defaults to patch_size // 4
    tissue_threshold: float = 0.2
    normalization: str = "unit_interval"  # storage range; "signed_unit" applies at the model boundary

    def __post_init__(self) -> None:
        if self.stride is None:
            self.stride = self.patch_size // 4
        if self.patch_size < 1:
            raise ConfigError(f"patch_size must be >= 1, got {self.patch_size}")
        if not 1 <= self.stride <= self.patch_size:
            raise ConfigError(
                f"stride must be in [1, patch_size], got stride={self.stride} patch_size={self.patch_size}"
            )
        if not 0.0 <= self.tissue_threshold <= 1.0:
            raise ConfigError(f"tissue_threshold must be in [0, 1], got {self.tissue_threshold}")
        if self.normalization not in ("unit_interval", "signed_unit"):
            raise ConfigError(f"unknown normalization {self.normalization!r}")


@dataclass
class PatchPair:
    """Co-located nonstained/stained patches cut from one slide pair."""

    slide_id: str
    x0: int
    y0: int
    size: int
    nonstained: np.ndarray  # size x size x 3, float32 in [0, 1]
    stained: np.ndarray


def enumerate_windows(
    image_width: int, image_height: int, cfg: ExtractionConfig
) -> list[tuple[int, int]]:
    """All (x0, y0) window offsets on the stride grid, row-major.

    Offsets are i*stride with the window fully inside the image; remainder
    pixels at the right/bottom edge are dropped (inference-side stitching
    covers full slides separately).
    """
    p, s = cfg.patch_size, cfg.stride
    if image_width < p or image_height < p:
        raise DataError(
            f"slide too small: {image_width}x{image_height} cannot fit a {p}x{p} patch"
        )
    xs = range(0, image_width - p + 1, s)
    ys = range(0, image_height - p + 1, s)
    return [(x0, y0) for y0 in ys for x0 in xs]


def tissue_fraction(patch: np.ndarray, whiteness: float = TISSUE_WHITENESS_THRESHOLD) -> float:
    """Fraction of pixels that are tissue rather than bright background.

    A pixel counts as background when all three channels exceed the
    whiteness threshold; everything else is tissue.
    """
    background = np.all(patch > whiteness, axis=-1)
    return float(1.0 - background.mean())


def _load_slide_pair(record: SlidePairRecord) -> tuple[np.ndarray, np.ndarray]:
    try:
        nonstained = images.load_rgb(record.nonstained_path)
        stained = images.load_rgb(record.stained_path)
    except DataError as exc:
        raise DataError(f"slide {record.slide_id}: {exc}") from exc
    if nonstained.shape != stained.shape:
        raise DataError(
            f"unregistered pair for slide {record.slide_id}: "
            f"nonstained {nonstained.shape[:2]} vs stained {stained.shape[:2]}"
        )
    return nonstained, stained


def _alignment_warning(nonstained: np.ndarray, stained: np.ndarray, slide_id: str) -> None:
    # Registration itself is out of scope; a negative grayscale correlation
    # between the halves is a strong hint the pair is misaligned.
    a = nonstained.mean(axis=-1).astype(np.float64).ravel()
    b = stained.mean(axis=-1).astype(np.float64).ravel()
    if a.std() == 0.0 or b.std() == 0.0:
        return
    cc = float(np.corrcoef(a, b)[0, 1])
    if cc < 0.0:
        log.warning(
            "slide %s: grayscale correlation between pair is %.3f (< 0); check registration",
            slide_id,
            cc,
        )


def extract_pairs(record: SlidePairRecord, cfg: ExtractionConfig) -> Iterator[PatchPair]:
    """Yield one PatchPair per window whose stained side passes the tissue filter.

    Windows are cut at identical coordinates on both slides and yielded
    lazily, one pair at a time.
    """
    nonstained_u8, stained_u8 = _load_slide_pair(record)
    h, w = stained_u8.shape[:2]
    _alignment_warning(nonstained_u8, stained_u8, record.slide_id)
    for x0, y0 in enumerate_windows(w, h, cfg):
        stained = images.u8_to_unit(stained_u8[y0 : y0 + cfg.patch_size, x0 : x0 + cfg.patch_size])
        if tissue_fraction(stained) < cfg.tissue_threshold:
            continue
        nonstained = images.u8_to_unit(
            nonstained_u8[y0 : y0 + cfg.patch_size, x0 : x0 + cfg.patch_size]
        )
        yield PatchPair(
            slide_id=record.slide_id,
            x0=x0,
            y0=y0,
            size=cfg.patch_size,
            nonstained=nonstained,
            stained=stained,
        )


def split_manifest(
    records: Sequence[SlidePairRecord], train_count: int, seed: int
) -> list[SlidePairRecord]:
    """Assign train/val splits per slide, deterministically for a given seed."""
    ids = [r.slide_id for r in records]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate slide_id in manifest")
    if not 0 < train_count < len(records):
        raise ConfigError(
            f"train_count must be in (0, {len(records)}), got {train_count}"
        )
    order = np.random.default_rng(seed).permutation(len(records))
    train_idx = set(order[:train_count].tolist())
    return [
        replace(r, split="train" if i in train_idx else "val")
        for i, r in enumerate(records)
    ]


# --------------------------------------------------------------------------
# Manifest and patch-index files (JSON lines)
# --------------------------------------------------------------------------

def read_manifest(path: str | os.PathLike, resolve: bool = True) -> list[SlidePairRecord]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    records = []
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            row = json.loads(line)
            rec = SlidePairRecord(
                slide_id=row["slide_id"],
                nonstained_path=row["nonstained_path"],
                stained_path=row["stained_path"],
                split=row.get("split"),
            )
        except (json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{path}:{line_no}: bad manifest row: {exc}") from exc
        records.append(rec.resolved(path.parent) if resolve else rec)
    ids = [r.slide_id for r in records]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate slide_id")
    return records


def write_manifest(path: str | os.PathLike, records: Sequence[SlidePairRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for r in records:
            row = {
                "slide_id": r.slide_id,
                "nonstained_path": r.nonstained_path,
                "stained_path": r.stained_path,
                "split": r.split,
            }
            fh.write(json.dumps(row) + "\n")


def read_index(patches_dir: str | os.PathLike) -> list[dict]:
    path = Path(patches_dir) / "index.jsonl"
    if not path.exists():
        raise DataError(f"patch index not found: {path}")
    rows = []
    for line in path.read_text().splitlines():
        if line.strip():
            rows.append(json.loads(line))
    return rows


def load_indexed_pair(patches_dir: str | os.PathLike, row: dict) -> PatchPair:
    root = Path(patches_dir)
    nonstained = images.load_unit_rgb(root / row["nonstained_png"])
    stained = images.load_unit_rgb(root / row["stained_png"])
    return PatchPair(
        slide_id=row["slide_id"],
        x0=int(row["x0"]),
        y0=int(row["y0"]),
        size=stained.shape[0],
        nonstained=nonstained,
        stained=stained,
    )


def extract_manifest(
    records: Sequence[SlidePairRecord],
    cfg: ExtractionConfig,
    out_dir: str | os.PathLike,
) -> Path:
    """Extract patch pairs for every slide in a manifest.

    Writes PNG pairs under ``out_dir/patches``, an ``index.jsonl``, and a
    copy of the manifest, making the output directory self-contained.
    Per-window work is pure; the index is written by this single writer.
    """
    out_dir = Path(out_dir)
    patch_dir = out_dir / "patches"
    patch_dir.mkdir(parents=True, exist_ok=True)
    index_path = out_dir / "index.jsonl"
    n = 0
    with index_path.open("w") as index:
        for record in records:
            for pair in extract_pairs(record, cfg):
                stem = f"{pair.slide_id}_x{pair.x0:06d}_y{pair.y0:06d}"
                non_rel = f"patches/{stem}_nonstained.png"
                sta_rel = f"patches/{stem}_stained.png"
                images.save_rgb(out_dir / non_rel, pair.nonstained)
                images.save_rgb(out_dir / sta_rel, pair.stained)
                index.write(
                    json.dumps(
                        {
                            "slide_id": pair.slide_id,
                            "x0": pair.x0,
                            "y0": pair.y0,
                            "nonstained_png": non_rel,
                            "stained_png": sta_rel,
                        }
                    )
                    + "\n"
                )
                n += 1
            log.info("slide %s extracted (%d total patches so far)", record.slide_id, n)
    write_manifest(out_dir / "manifest.jsonl", records)
    log.info("wrote %d patch pairs to %s", n, out_dir)
    return index_path
