"""Thin PNG adapter: 8-bit RGB rasters as (H, W, 3) uint8 arrays."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DataError


def read_png(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def write_png(path, raster: np.ndarray) -> None:
    raster = np.asarray(raster)
    if raster.ndim != 3 or raster.shape[-1] != 3 or raster.dtype != np.uint8:
        raise DataError(f"expected (H, W, 3) uint8 raster, got {raster.shape} {raster.dtype}")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(raster, mode="RGB").save(path, format="PNG")
