"""Image I/O and range conversions.

Conventions used throughout the package:

* storage: 8-bit RGB PNG, or float arrays in [0, 1] ("unit" range)
* model boundary: float32 in [-1, 1] ("signed unit" range)

All conversions between the two happen in this module so every other layer
can assume a single convention.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


def load_rgb(path: str | os.PathLike) -> np.ndarray:
    """Load an image file as an HxWx3 uint8 array."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"image not found: {path}")
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except DataError:
        raise
    except Exception as exc:  # PIL raises a zoo of decode errors
        raise DataError(f"cannot read image {path}: {exc}") from exc


def load_unit_rgb(path: str | os.PathLike) -> np.ndarray:
    """Load an image as float32 RGB in [0, 1]."""
    return u8_to_unit(load_rgb(path))


def save_rgb(path: str | os.PathLike, arr: np.ndarray) -> None:
    """Write an RGB array (uint8, or float in [0, 1]) as PNG/JPEG by suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if arr.dtype != np.uint8:
        arr = unit_to_u8(arr)
    Image.fromarray(arr, mode="RGB").save(path)


def u8_to_unit(arr: np.ndarray) -> np.ndarray:
    return (arr.astype(np.float32)) / np.float32(255.0)


def unit_to_u8(arr: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)


def unit_to_model(arr: np.ndarray) -> np.ndarray:
    """[0, 1] -> [-1, 1], float32."""
    return arr.astype(np.float32) * np.float32(2.0) - np.float32(1.0)


def model_to_unit(arr: np.ndarray) -> np.ndarray:
    """[-1, 1] -> [0, 1], clipped."""
    return np.clip((arr + 1.0) / 2.0, 0.0, 1.0)
