"""Tiled whole-slide inference with overlap blending.

A trained generator only accepts fixed-size tiles, so a full slide is
covered by a strided tile grid (reflect-padded at the right/bottom edges to
a tiling-complete size), each tile is translated independently, and the
predictions are reassembled:

* ``average``: every output pixel is the uniform average of all covering
  tile predictions (accumulated in float64, normalized once at the end);
* ``center_crop``: each pixel is taken from the tile whose center is
  nearest, giving coverage exactly 1.

Tiles may be predicted in any order or in parallel; accumulation happens in
a canonical order so the stitched result never depends on scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from . import images
from .errors import ConfigError, ContractError, DataError


@dataclass
class StitchPlan:
    tile_size: int
    stride: int | None = None  # defaults to tile_size // 2
    blend: str = "average"

    def __post_init__(self) -> None:
        if self.stride is None:
            self.stride = self.tile_size // 2
        if self.tile_size < 1:
            raise ConfigError(f"tile_size must be >= 1, got {self.tile_size}")
        if not 1 <= self.stride <= self.tile_size:
            raise ConfigError(
                f"stride must be in [1, tile_size], got stride={self.stride} "
                f"tile_size={self.tile_size}"
            )
        if self.blend not in ("average", "center_crop"):
            raise ConfigError(f"unknown blend mode {self.blend!r}")


class IdentityModel:
    """Stand-in generator returning its input; useful for plumbing tests."""

    def __call__(self, x: torch.Tensor, stochastic: bool = False) -> torch.Tensor:
        return x

    def eval(self) -> "IdentityModel":
        return self


def tile_positions(length: int, plan: StitchPlan) -> tuple[list[int], int]:
    """Tile start offsets along one axis and the padded axis length."""
    t, s = plan.tile_size, plan.stride
    steps = max(0, math.ceil((length - t) / s))
    padded = t + steps * s
    return [i * s for i in range(steps + 1)], padded


def _pad_reflect(slide: np.ndarray, padded_h: int, padded_w: int) -> np.ndarray:
    h, w = slide.shape[:2]
    pad_h, pad_w = padded_h - h, padded_w - w
    if pad_h >= h or pad_w >= w:
        raise DataError(
            f"slide {w}x{h} too small to reflect-pad to {padded_w}x{padded_h}"
        )
    if pad_h == 0 and pad_w == 0:
        return slide
    return np.pad(slide, ((0, pad_h), (0, pad_w), (0, 0)), mode="reflect")


def coverage_map(width: int, height: int, plan: StitchPlan) -> np.ndarray:
    """Per-pixel count of covering tiles on the original (unpadded) canvas."""
    xs, padded_w = tile_positions(width, plan)
    ys, padded_h = tile_positions(height, plan)
    if plan.blend == "center_crop":
        return np.ones((height, width), dtype=np.int64)
    cover = np.zeros((padded_h, padded_w), dtype=np.int64)
    t = plan.tile_size
    for y0 in ys:
        for x0 in xs:
            cover[y0 : y0 + t, x0 : x0 + t] += 1
    return cover[:height, :width]


def _center_crop_bounds(positions: list[int], tile: int, stride: int, padded: int) -> list[tuple[int, int]]:
    # responsibility region per tile: split overlap down the middle
    margin = (tile - stride) // 2
    bounds = []
    for i, p in enumerate(positions):
        lo = 0 if i == 0 else p + margin
        hi = padded if i == len(positions) - 1 else positions[i + 1] + margin
        bounds.append((lo, hi))
    return bounds


def infer_slide(
    model,
    slide: np.ndarray,
    plan: StitchPlan,
    stochastic: bool = False,
) -> np.ndarray:
    """Translate a whole slide through ``model`` tile by tile.

    ``slide`` is HxWx3, uint8 or float in [0, 1]; the output matches the
    input's dtype convention and dimensions. ``model`` must map a tensor of
    shape 1x3xSxS in [-1, 1] to the same shape (spec tile size must equal
    ``plan.tile_size``).
    """
    if slide.ndim != 3 or slide.shape[2] != 3:
        raise ContractError(f"slide must be HxWx3, got {slide.shape}")
    was_u8 = slide.dtype == np.uint8
    unit = images.u8_to_unit(slide).astype(np.float64) if was_u8 else np.asarray(slide, dtype=np.float64)

    h, w = unit.shape[:2]
    xs, padded_w = tile_positions(w, plan)
    ys, padded_h = tile_positions(h, plan)
    padded = _pad_reflect(unit, padded_h, padded_w)

    t = plan.tile_size
    acc = np.zeros((padded_h, padded_w, 3), dtype=np.float64)
    cnt = np.zeros((padded_h, padded_w, 1), dtype=np.float64)
    x_bounds = _center_crop_bounds(xs, t, plan.stride, padded_w)
    y_bounds = _center_crop_bounds(ys, t, plan.stride, padded_h)

    # canonical row-major accumulation keeps the result scheduling-independent
    for yi, y0 in enumerate(ys):
        for xi, x0 in enumerate(xs):
            tile = padded[y0 : y0 + t, x0 : x0 + t]
            x_in = torch.from_numpy(
                images.unit_to_model(tile).transpose(2, 0, 1)[None]
            )
            with torch.no_grad():
                out = model(x_in, stochastic=stochastic)
            if not isinstance(out, torch.Tensor) or out.shape != x_in.shape:
                raise ContractError(
                    f"model returned shape {getattr(out, 'shape', None)}, expected {tuple(x_in.shape)}"
                )
            pred = images.model_to_unit(
                out[0].numpy().astype(np.float64).transpose(1, 2, 0)
            )
            if plan.blend == "average":
                acc[y0 : y0 + t, x0 : x0 + t] += pred
                cnt[y0 : y0 + t, x0 : x0 + t] += 1.0
            else:
                (ylo, yhi), (xlo, xhi) = y_bounds[yi], x_bounds[xi]
                acc[ylo:yhi, xlo:xhi] = pred[ylo - y0 : yhi - y0, xlo - x0 : xhi - x0]
                cnt[ylo:yhi, xlo:xhi] = 1.0

    stitched = (acc / cnt)[:h, :w]
    stitched = np.clip(stitched, 0.0, 1.0)
    return images.unit_to_u8(stitched) if was_u8 else stitched.astype(slide.dtype)
