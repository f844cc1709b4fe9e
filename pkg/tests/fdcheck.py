"""Central finite-difference gradient oracle used across the test suite.

Kept deliberately independent of the library's backward rules: it only calls
forward functions and perturbs raw numpy buffers.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

H = 1e-5


def fd_gradient(
    f: Callable[[], float],
    arr: np.ndarray,
    h: float = H,
    indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. the entries of ``arr``.

    ``indices`` restricts the check to a subset of flat positions (the rest
    of the returned gradient is NaN); used where a full sweep is too slow.
    """
    assert arr.dtype == np.float64, "finite differences need 64-bit buffers"
    flat = arr.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        grad[i] = (fp - fm) / (2.0 * h)
    return grad.reshape(arr.shape)


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute difference over the checked entries, scaled by the
    numeric gradient's magnitude (floored at 1 to keep zero-grad cases sane)."""
    mask = ~np.isnan(numeric)
    assert mask.any(), "no entries were checked"
    diff = np.abs(np.asarray(analytic)[mask] - numeric[mask]).max()
    scale = max(np.abs(numeric[mask]).max(), 1.0)
    return float(diff / scale)


def sample_indices(rng: np.random.Generator, size: int, count: int) -> np.ndarray:
    return rng.choice(size, size=min(count, size), replace=False)
