"""Affine transform encoder: a one-conv localization net regresses a 2x3
matrix per batch item, a grid generator maps output pixels to normalized
source coordinates, and a bilinear sampler warps the feature map.

Theta rows are [a, b, tx, c, d, ty]; the sampler maps normalized coordinates
(x, y) in [-1, 1] to pixel centers with the half-pixel-offset convention, so
an identity theta reproduces the input exactly.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import ops
from .errors import DimensionError
from .nn import Conv2d, Linear, Module
from .tensor import Tensor

IDENTITY_THETA = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)

# Sampling positions this close to an integer pixel coordinate are snapped to
# it, so warps that are exact pixel permutations reproduce values bit-for-bit.
_SNAP_EPS = 1e-6


def normalized_lattice(size: int, dtype) -> np.ndarray:
    """Normalized center coordinates of ``size`` pixels: (2i + 1)/size - 1."""
    return ((2.0 * np.arange(size) + 1.0 - size) / size).astype(dtype)


def affine_grid(theta: Tensor, out_h: int, out_w: int) -> Tensor:
    """Sampling grid (N, H, W, 2) from per-item affine matrices (N, 6).

    Each output pixel center (x, y) in normalized coordinates maps to
    theta @ [x, y, 1]; the last grid axis stores (x_src, y_src).
    """
    if out_h < 1 or out_w < 1:
        raise DimensionError(f"grid size must be positive, got {out_h}x{out_w}")
    if theta.ndim != 2 or theta.shape[1] != 6:
        raise DimensionError(f"theta must have shape (N, 6), got {theta.shape}")
    n = theta.shape[0]
    xs = normalized_lattice(out_w, theta.dtype)[None, :]  # (1, W)
    ys = normalized_lattice(out_h, theta.dtype)[:, None]  # (H, 1)
    a, b, tx, c, d, ty = (theta.data[:, i][:, None, None] for i in range(6))
    grid = np.empty((n, out_h, out_w, 2), dtype=theta.dtype)
    grid[..., 0] = a * xs + b * ys + tx
    grid[..., 1] = c * xs + d * ys + ty

    def backward(g):
        gx, gy = g[..., 0], g[..., 1]
        g_theta = np.stack(
            [
                (gx * xs).sum(axis=(1, 2)),
                (gx * ys).sum(axis=(1, 2)),
                gx.sum(axis=(1, 2)),
                (gy * xs).sum(axis=(1, 2)),
                (gy * ys).sum(axis=(1, 2)),
                gy.sum(axis=(1, 2)),
            ],
            axis=1,
        )
        return (g_theta.astype(g.dtype),)

    return ops._track((theta,), grid, backward)


def grid_sample(x: Tensor, grid: Tensor) -> Tensor:
    """Bilinear sampling of ``x`` (N,C,H,W) at normalized ``grid`` (N,Ho,Wo,2).

    Coordinates outside [-1, 1] read zeros (zero border padding).  The result
    is differentiable with respect to both the features and the grid.
    """
    if x.ndim != 4 or grid.ndim != 4 or grid.shape[-1] != 2:
        raise DimensionError("grid_sample expects features (N,C,H,W) and grid (N,Ho,Wo,2)")
    if x.shape[0] != grid.shape[0]:
        raise DimensionError(f"batch mismatch: features {x.shape[0]} vs grid {grid.shape[0]}")
    n, c, h, w = x.shape
    _, ho, wo, _ = grid.shape

    def to_pixels(coords, size):
        pix = ((coords + 1.0) * size - 1.0) / 2.0
        near = np.rint(pix)
        return np.where(np.abs(pix - near) <= _SNAP_EPS, near, pix)

    px = to_pixels(grid.data[..., 0].astype(np.float64), w)
    py = to_pixels(grid.data[..., 1].astype(np.float64), h)
    x0 = np.floor(px).astype(np.int64)
    y0 = np.floor(py).astype(np.int64)
    tx = (px - x0).astype(x.dtype)
    ty = (py - y0).astype(x.dtype)

    ni = np.arange(n)[:, None, None]
    corners = []
    for dy in (0, 1):
        for dx in (0, 1):
            cx, cy = x0 + dx, y0 + dy
            valid = ((cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)).astype(x.dtype)
            vals = x.data[ni, :, cy.clip(0, h - 1), cx.clip(0, w - 1)]  # (N,Ho,Wo,C)
            wx = tx if dx else 1.0 - tx
            wy = ty if dy else 1.0 - ty
            corners.append((vals, valid, wx * wy, dx, dy))
    out_nhwc = sum(vals * (valid * wgt)[..., None] for vals, valid, wgt, _, _ in corners)
    out = np.ascontiguousarray(out_nhwc.transpose(0, 3, 1, 2))

    def backward(g):
        g_nhwc = g.transpose(0, 2, 3, 1)  # (N,Ho,Wo,C)
        g_x_nhwc = np.zeros((n, h, w, c), dtype=g.dtype)
        dfdx = np.zeros((n, ho, wo), dtype=g.dtype)
        dfdy = np.zeros((n, ho, wo), dtype=g.dtype)
        g_dot = None
        for vals, valid, wgt, dx, dy in corners:
            cx, cy = x0 + dx, y0 + dy
            np.add.at(
                g_x_nhwc,
                (ni, cy.clip(0, h - 1), cx.clip(0, w - 1)),
                g_nhwc * (valid * wgt)[..., None],
            )
            g_dot = (g_nhwc * vals).sum(axis=-1) * valid  # (N,Ho,Wo)
            sx = 1.0 if dx else -1.0
            sy = 1.0 if dy else -1.0
            dfdx += g_dot * sx * (ty if dy else 1.0 - ty)
            dfdy += g_dot * sy * (tx if dx else 1.0 - tx)
        g_x = np.ascontiguousarray(g_x_nhwc.transpose(0, 3, 1, 2))
        g_grid = np.empty_like(grid.data)
        g_grid[..., 0] = dfdx * (w / 2.0)
        g_grid[..., 1] = dfdy * (h / 2.0)
        return g_x, g_grid

    return ops._track((x, grid), out, backward)


class AffineTransformEncoder(Module):
    """Localize -> grid -> resample, preserving the feature map's shape.

    The regressor starts at zero weights with an identity bias, so a freshly
    initialized encoder is an exact pass-through.
    """

    def __init__(
        self,
        channels: int,
        hidden: int = 8,
        kernel_size: int = 3,
        rng: Optional[np.random.Generator] = None,
        dtype=np.float32,
    ):
        super().__init__()
        self.kernel_size = kernel_size
        self.loc_conv = Conv2d(
            channels, hidden, kernel_size, stride=1, padding=kernel_size // 2,
            bias=True, rng=rng, dtype=dtype,
        )
        self.regressor = Linear(hidden, 6, rng=rng, dtype=dtype)
        self.regressor.weight.data[:] = 0.0
        self.regressor.bias.data[:] = np.asarray(IDENTITY_THETA, dtype=dtype)

    def localize(self, x: Tensor) -> Tensor:
        """Per-item transform parameters (N, 6) from the feature map."""
        if x.shape[2] < self.kernel_size or x.shape[3] < self.kernel_size:
            raise DimensionError(
                f"feature map {x.shape[2]}x{x.shape[3]} smaller than localization kernel "
                f"{self.kernel_size}"
            )
        h = ops.relu(self.loc_conv(x))
        return self.regressor(ops.global_avg_pool(h))

    def forward(self, x: Tensor) -> Tensor:
        theta = self.localize(x)
        grid = affine_grid(theta, x.shape[2], x.shape[3])
        return grid_sample(x, grid)
