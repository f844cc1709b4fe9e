"""Raster preprocessing: bounding box, aspect-preserving random resize,
center padding, stroke thinning to one pixel, and palette recoloring.

``normalize`` applies identical geometry to the sketch and its label raster,
derives a stroke mask, thins it, and recolors labels through the palette so
interpolation artifacts collapse back onto exact palette colors.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DataError, DimensionError, EmptySketchError, ParameterError
from .ops import _resize_matrix
from .schema import BACKGROUND_RGB, LabelMap, Palette


@dataclass
class PrepConfig:
    canvas: int = 800
    resize_min: int = 600
    resize_max: int = 700
    background: tuple[int, int, int] = BACKGROUND_RGB
    seed: int = 0
    # sketch pixels at least this far (max channel difference) from the
    # background color count as stroke when no label raster is available
    stroke_threshold: int = 64

    def validate(self) -> None:
        if not (1 <= self.resize_min <= self.resize_max <= self.canvas):
            raise ParameterError(
                f"need 1 <= resize_min <= resize_max <= canvas, got "
                f"{self.resize_min}/{self.resize_max}/{self.canvas}"
            )


def sketch_rng(seed: int, sketch_id: str) -> np.random.Generator:
    """Independent generator for one sketch, stable across runs and workers."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(sketch_id.encode())]))


def _check_raster(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise DimensionError(f"expected an (H, W, 3) raster, got shape {img.shape}")
    return img


def bounding_box(img: np.ndarray, background=BACKGROUND_RGB) -> tuple[int, int, int, int]:
    """Minimal (left, top, right, bottom), inclusive, of non-background pixels."""
    img = _check_raster(img)
    mask = (img != np.asarray(background, dtype=img.dtype)).any(axis=-1)
    if not mask.any():
        raise EmptySketchError("raster contains only background pixels")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Separable bilinear resize of an (H, W, 3) uint8 raster."""
    img = _check_raster(img)
    h, w, _ = img.shape
    mh = _resize_matrix(h, out_h, np.float64)
    mw = _resize_matrix(w, out_w, np.float64)
    rows = np.tensordot(mh, img.astype(np.float64), axes=([1], [0]))  # (out_h, w, 3)
    out = np.tensordot(rows, mw, axes=([1], [1])).transpose(0, 2, 1)  # (out_h, out_w, 3)
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def resize_nearest(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    img = _check_raster(img)
    h, w, _ = img.shape
    ri = np.minimum((np.arange(out_h) + 0.5) * (h / out_h), h - 1).astype(np.int64)
    ci = np.minimum((np.arange(out_w) + 0.5) * (w / out_w), w - 1).astype(np.int64)
    return img[ri][:, ci]


# ---------------------------------------------------------------------------
# thinning


def _neighborhood(mask: np.ndarray, i: int, j: int) -> tuple[int, ...]:
    """P2..P9 clockwise from north, zero outside the raster."""
    h, w = mask.shape

    def at(y, x):
        return int(mask[y, x]) if 0 <= y < h and 0 <= x < w else 0

    return (
        at(i - 1, j), at(i - 1, j + 1), at(i, j + 1), at(i + 1, j + 1),
        at(i + 1, j), at(i + 1, j - 1), at(i, j - 1), at(i - 1, j - 1),
    )


def _transitions(p: tuple[int, ...]) -> int:
    return sum(1 for a, b in zip(p, p[1:] + p[:1]) if a == 0 and b == 1)


def _shifted(mask: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    ys = slice(max(dy, 0), h + min(dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    yd = slice(max(-dy, 0), h + min(-dy, 0))
    xd = slice(max(-dx, 0), w + min(-dx, 0))
    out[yd, xd] = mask[ys, xs]
    return out


def _candidates(mask: np.ndarray, first_pass: bool) -> np.ndarray:
    """Pixels satisfying the thinning conditions, evaluated in parallel."""
    p = [
        _shifted(mask, -1, 0),   # P2 north neighbor value at each pixel
        _shifted(mask, -1, 1),   # P3 north-east
        _shifted(mask, 0, 1),    # P4 east
        _shifted(mask, 1, 1),    # P5 south-east
        _shifted(mask, 1, 0),    # P6 south
        _shifted(mask, 1, -1),   # P7 south-west
        _shifted(mask, 0, -1),   # P8 west
        _shifted(mask, -1, -1),  # P9 north-west
    ]
    arr = np.stack([q.astype(np.int8) for q in p])
    b = arr.sum(axis=0)
    nxt = np.roll(arr, -1, axis=0)
    a = ((arr == 0) & (nxt == 1)).sum(axis=0)
    if first_pass:
        cond = (p[0] & p[2] & p[4]) == 0
        cond &= (p[2] & p[4] & p[6]) == 0
    else:
        cond = (p[0] & p[2] & p[6]) == 0
        cond &= (p[0] & p[4] & p[6]) == 0
    return mask & (b >= 2) & (b <= 6) & (a == 1) & cond


def _deletable_now(mask: np.ndarray, i: int, j: int, first_pass: bool) -> bool:
    p = _neighborhood(mask, i, j)
    b = sum(p)
    if not (2 <= b <= 6) or _transitions(p) != 1:
        return False
    p2, p4, p6, p8 = p[0], p[2], p[4], p[6]
    if first_pass:
        return p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
    return p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0


def _globally_safe(mask: np.ndarray, i: int, j: int) -> bool:
    """True when removing (i, j) keeps its foreground neighbors 8-connected
    to each other without passing through (i, j)."""
    h, w = mask.shape
    neigh = [
        (y, x)
        for y in range(max(i - 1, 0), min(i + 2, h))
        for x in range(max(j - 1, 0), min(j + 2, w))
        if (y, x) != (i, j) and mask[y, x]
    ]
    if len(neigh) <= 1:
        return False  # endpoint or isolated pixel: deletion would erase structure
    target = set(neigh)
    seen = {neigh[0]}
    frontier = [neigh[0]]
    while frontier and not target.issubset(seen):
        y, x = frontier.pop()
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                ny, nx = y + dy, x + dx
                if (
                    0 <= ny < h and 0 <= nx < w
                    and (ny, nx) != (i, j)
                    and mask[ny, nx]
                    and (ny, nx) not in seen
                ):
                    seen.add((ny, nx))
                    frontier.append((ny, nx))
    return target.issubset(seen)


def _blocks_2x2(mask: np.ndarray) -> np.ndarray:
    return mask[:-1, :-1] & mask[:-1, 1:] & mask[1:, :-1] & mask[1:, 1:]


def thin(mask: np.ndarray) -> np.ndarray:
    """Iteratively erode a boolean stroke mask to single-pixel width.

    Two directional sub-passes per iteration; each deletion is re-verified on
    the current raster so every removed pixel is simple, which keeps the
    8-connected component count intact.  A final sweep clears any remaining
    2x2 blocks whose pixels can be removed without splitting a component.
    Idempotent: the result is a fixpoint.
    """
    mask = np.asarray(mask, dtype=bool).copy()
    while True:
        round_changed = False
        sub_changed = True
        while sub_changed:
            sub_changed = False
            for first_pass in (True, False):
                for i, j in np.argwhere(_candidates(mask, first_pass)):
                    if _deletable_now(mask, i, j, first_pass):
                        mask[i, j] = False
                        sub_changed = True
            round_changed |= sub_changed
        # clear leftover 2x2 blocks where a corner can go without splitting
        # anything, then give the directional passes another look
        for bi, bj in np.argwhere(_blocks_2x2(mask)):
            for i, j in ((bi, bj), (bi, bj + 1), (bi + 1, bj), (bi + 1, bj + 1)):
                if mask[i, j] and _globally_safe(mask, i, j):
                    mask[i, j] = False
                    round_changed = True
                    break
        if not round_changed:
            return mask


# ---------------------------------------------------------------------------
# recoloring


def recolor(img: np.ndarray, palette: Palette) -> LabelMap:
    """Assign each pixel the palette class with the nearest RGB (Euclidean);
    ties break toward the lowest class index."""
    img = _check_raster(img)
    h, w, _ = img.shape
    flat = img.reshape(-1, 3).astype(np.int64)
    colors = palette.colors().astype(np.int64)
    d2 = ((flat[:, None, :] - colors[None, :, :]) ** 2).sum(axis=2)
    return LabelMap(d2.argmin(axis=1).reshape(h, w), palette)


# ---------------------------------------------------------------------------
# full normalization


def normalize(
    img: np.ndarray,
    labels: Optional[np.ndarray],
    cfg: PrepConfig,
    palette: Palette,
    rng: Optional[np.random.Generator] = None,
) -> tuple[np.ndarray, Optional[LabelMap]]:
    """Crop, randomly rescale, center on the canvas, thin, recolor.

    Returns the normalized sketch raster and (when ``labels`` is given) the
    normalized LabelMap.  Both receive identical geometry; thinning uses the
    label raster's stroke mask when available, else a sketch-color threshold.
    """
    cfg.validate()
    img = _check_raster(img)
    if labels is not None:
        labels = _check_raster(labels)
        if labels.shape != img.shape:
            raise DataError(f"sketch {img.shape} and labels {labels.shape} differ in size")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    bg = np.asarray(cfg.background, dtype=np.uint8)

    union = img if labels is None else np.where((labels != bg).any(-1, keepdims=True), labels, img)
    left, top, right, bottom = bounding_box(union, cfg.background)
    img_c = img[top : bottom + 1, left : right + 1]
    labels_c = labels[top : bottom + 1, left : right + 1] if labels is not None else None

    side = int(rng.integers(cfg.resize_min, cfg.resize_max + 1))
    h, w, _ = img_c.shape
    longest = max(h, w)
    out_h = side if h == longest else max(1, round(h * side / longest))
    out_w = side if w == longest else max(1, round(w * side / longest))
    img_r = resize_bilinear(img_c, out_h, out_w)
    labels_r = resize_nearest(labels_c, out_h, out_w) if labels_c is not None else None

    canvas = np.empty((cfg.canvas, cfg.canvas, 3), dtype=np.uint8)
    canvas[:] = bg
    oy = (cfg.canvas - out_h) // 2
    ox = (cfg.canvas - out_w) // 2
    sketch = canvas.copy()
    sketch[oy : oy + out_h, ox : ox + out_w] = img_r
    label_full = None
    if labels_r is not None:
        label_full = canvas.copy()
        label_full[oy : oy + out_h, ox : ox + out_w] = labels_r

    if label_full is not None:
        mask = (label_full != bg).any(axis=-1)
    else:
        diff = np.abs(sketch.astype(np.int16) - bg.astype(np.int16)).max(axis=-1)
        mask = diff >= cfg.stroke_threshold
    if not mask.any():
        raise EmptySketchError("no stroke pixels survived resizing")
    mask = thin(mask)

    sketch = np.where(mask[..., None], sketch, bg)
    # a stroke pixel must stay visible in the sketch even where interpolation
    # bleached it to the background color
    bleached = mask & (sketch == bg).all(axis=-1)
    sketch[bleached] = (0, 0, 0)

    label_map = None
    if label_full is not None:
        label_full = np.where(mask[..., None], label_full, bg)
        label_map = recolor(label_full, palette)
        label_map = LabelMap(np.where(mask, label_map.classes, 0), palette)
    return sketch, label_map
