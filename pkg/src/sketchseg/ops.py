"""Differentiable array operations used by the segmentation network.

Every function computes its result with numpy and, when a tape is active and
some input wants gradients, registers a backward rule.  Convolution uses
cross-correlation semantics (no kernel flip) throughout.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import DimensionError, ParameterError, StateError
from .tensor import Tensor, active_tape

# ---------------------------------------------------------------------------
# recording helper


def _track(inputs, data, backward) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out = Tensor(data, requires_grad=True)
        tape.record(inputs, out, backward)
        return out
    return Tensor(data)


def _check_same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ParameterError(f"mixed tensor dtypes {sorted(str(d) for d in dtypes)}")


# ---------------------------------------------------------------------------
# elementwise and reductions


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    _check_same_dtype(a, b)

    def backward(g):
        return g, g

    return _track((a, b), a.data + b.data, backward)


def mul_scalar(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        return (g * c,)

    return _track((x,), x.data * c, backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        return (np.full_like(x.data, g),)

    return _track((x,), np.asarray(x.data.sum(), dtype=x.dtype), backward)


def mean_all(x: Tensor) -> Tensor:
    n = x.size

    def backward(g):
        return (np.full_like(x.data, g / n),)

    return _track((x,), np.asarray(x.data.mean(), dtype=x.dtype), backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return _track((x,), np.where(mask, x.data, 0), backward)


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.shape

    def backward(g):
        return (g.reshape(orig),)

    return _track((x,), x.data.reshape(shape), backward)


# ---------------------------------------------------------------------------
# convolution


def _conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _window_view(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """Read-only sliding-window view of shape (N, C, kh, kw, Ho, Wo)."""
    n, c, h, w = xp.shape
    ho = (h - kh) // stride + 1
    wo = (w - kw) // stride + 1
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlate ``x`` (N,Cin,H,W) with ``weight`` (Cout,Cin,kH,kW)."""
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv2d expects 4-d input and kernel")
    if stride < 1:
        raise ParameterError(f"conv2d stride must be >= 1, got {stride}")
    if padding < 0:
        raise ParameterError(f"conv2d padding must be >= 0, got {padding}")
    n, cin, h, w = x.shape
    cout, cin_k, kh, kw = weight.shape
    if cin != cin_k:
        raise DimensionError(f"input has {cin} channels but kernel expects {cin_k}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise DimensionError(
            f"kernel {kh}x{kw} does not fit padded input {h + 2 * padding}x{w + 2 * padding}"
        )
    if bias is not None:
        if bias.shape != (cout,):
            raise DimensionError(f"bias shape {bias.shape} != ({cout},)")
        _check_same_dtype(x, weight, bias)
    else:
        _check_same_dtype(x, weight)

    if padding:
        xp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        xp[:, :, padding : padding + h, padding : padding + w] = x.data
    else:
        xp = x.data
    ho = _conv_out_size(h, kh, stride, padding)
    wo = _conv_out_size(w, kw, stride, padding)

    ckk = cin * kh * kw
    cols = np.ascontiguousarray(_window_view(xp, kh, kw, stride)).reshape(n, ckk, ho * wo)
    w_mat = weight.data.reshape(cout, ckk)
    out = np.matmul(w_mat, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(n, cout, ho, wo)

    hp, wp = h + 2 * padding, w + 2 * padding

    def backward(g):
        g3 = g.reshape(n, cout, ho * wo)
        g_w = np.einsum("ncl,nkl->ck", g3, cols).reshape(weight.shape)
        g_cols = np.matmul(w_mat.T, g3).reshape(n, cin, kh, kw, ho, wo)
        g_xp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
        for i in range(kh):
            for j in range(kw):
                g_xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += g_cols[
                    :, :, i, j
                ]
        g_x = g_xp[:, :, padding : padding + h, padding : padding + w] if padding else g_xp
        if bias is not None:
            return g_x, g_w, g.sum(axis=(0, 2, 3))
        return g_x, g_w

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _track(inputs, out, backward)


# ---------------------------------------------------------------------------
# pooling


def maxpool2d(x: Tensor, k: int, stride: int) -> Tensor:
    """Window maximum with implicit -inf border padding of k//2 for odd k.

    Gradient flows to the window argmax only; ties resolve to the lowest
    flat index inside the window.
    """
    if k < 1 or stride < 1:
        raise ParameterError(f"maxpool2d needs positive k and stride, got k={k} stride={stride}")
    if x.ndim != 4:
        raise DimensionError("maxpool2d expects a 4-d tensor")
    n, c, h, w = x.shape
    pad = k // 2 if k % 2 == 1 else 0
    hp, wp = h + 2 * pad, w + 2 * pad
    if hp < k or wp < k:
        raise DimensionError(f"pool window {k} does not fit padded input {hp}x{wp}")

    if pad:
        xp = np.full((n, c, hp, wp), -np.inf, dtype=x.dtype)
        xp[:, :, pad : pad + h, pad : pad + w] = x.data
    else:
        xp = x.data
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    windows = np.ascontiguousarray(_window_view(xp, k, k, stride))  # (n,c,k,k,ho,wo)
    flat = windows.transpose(0, 1, 4, 5, 2, 3).reshape(n, c, ho, wo, k * k)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        di, dj = arg // k, arg % k
        oi = np.arange(ho)[None, None, :, None] * stride + di
        oj = np.arange(wo)[None, None, None, :] * stride + dj
        ni = np.arange(n)[:, None, None, None]
        ci = np.arange(c)[None, :, None, None]
        flat_idx = ((ni * c + ci) * hp + oi) * wp + oj
        g_xp = np.zeros(n * c * hp * wp, dtype=g.dtype)
        np.add.at(g_xp, flat_idx.ravel(), g.ravel())
        g_xp = g_xp.reshape(n, c, hp, wp)
        return (g_xp[:, :, pad : pad + h, pad : pad + w] if pad else g_xp,)

    return _track((x,), out, backward)


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError("global_avg_pool expects a 4-d tensor")
    n, c, h, w = x.shape

    def backward(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).astype(g.dtype),)

    return _track((x,), x.data.mean(axis=(2, 3)), backward)


# ---------------------------------------------------------------------------
# batch normalisation


def batchnorm2d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation; batch statistics in training, running in eval.

    ``running_mean``/``running_var`` are plain arrays mutated in place during
    training (exponential average, factor ``momentum``); variance is the
    biased estimator throughout.
    """
    if x.ndim != 4:
        raise DimensionError("batchnorm2d expects a 4-d tensor")
    n, c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"gamma/beta must have shape ({c},)")
    axes = (0, 2, 3)
    m = n * h * w

    if training:
        if m < 2:
            raise DimensionError("batchnorm training mode needs at least 2 values per channel")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (x.data - mean[None, :, None, None]) * inv_std[None, :, None, None]
    out = gamma.data[None, :, None, None] * x_hat + beta.data[None, :, None, None]

    def backward(g):
        g_gamma = (g * x_hat).sum(axis=axes)
        g_beta = g.sum(axis=axes)
        gs = gamma.data * inv_std
        if training:
            mean_g = g.mean(axis=axes)
            mean_gx = (g * x_hat).mean(axis=axes)
            g_x = gs[None, :, None, None] * (
                g - mean_g[None, :, None, None] - x_hat * mean_gx[None, :, None, None]
            )
        else:
            g_x = g * gs[None, :, None, None]
        return g_x.astype(g.dtype), g_gamma, g_beta

    return _track((x, gamma, beta), out.astype(x.dtype), backward)


# ---------------------------------------------------------------------------
# bilinear upsampling (fixed kernel, align_corners=False)

_UPSAMPLE_CACHE: dict[tuple[int, int, str], np.ndarray] = {}


def _resize_matrix(src: int, dst: int, dtype) -> np.ndarray:
    """Row-stochastic (dst, src) bilinear interpolation matrix, edge-clamped."""
    key = (src, dst, np.dtype(dtype).name)
    cached = _UPSAMPLE_CACHE.get(key)
    if cached is not None:
        return cached
    mat = np.zeros((dst, src), dtype=np.float64)
    scale = src / dst
    for o in range(dst):
        pos = (o + 0.5) * scale - 0.5
        i0 = int(np.floor(pos))
        t = pos - i0
        mat[o, min(max(i0, 0), src - 1)] += 1.0 - t
        mat[o, min(max(i0 + 1, 0), src - 1)] += t
    mat = mat.astype(dtype)
    _UPSAMPLE_CACHE[key] = mat
    return mat


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Deterministic bilinear upscaling by an integer factor (exact linear map)."""
    if int(factor) != factor or factor < 1:
        raise ParameterError(f"upsample factor must be an integer >= 1, got {factor}")
    factor = int(factor)
    if x.ndim != 4:
        raise DimensionError("bilinear_upsample expects a 4-d tensor")
    if factor == 1:

        def backward_id(g):
            return (g,)

        return _track((x,), x.data.copy(), backward_id)

    n, c, h, w = x.shape
    wh = _resize_matrix(h, h * factor, x.dtype)
    ww = _resize_matrix(w, w * factor, x.dtype)
    out = np.matmul(np.matmul(wh, x.data), ww.T)

    def backward(g):
        return (np.matmul(np.matmul(wh.T, g), ww),)

    return _track((x,), out, backward)


# ---------------------------------------------------------------------------
# dense layer


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map of row vectors: (N, Fin) @ (Fin, Fout) + bias."""
    if x.ndim != 2 or weight.ndim != 2:
        raise DimensionError("linear expects 2-d input and weight")
    if x.shape[1] != weight.shape[0]:
        raise DimensionError(f"linear shapes {x.shape} @ {weight.shape} do not align")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g_x = g @ weight.data.T
        g_w = x.data.T @ g
        if bias is not None:
            return g_x, g_w, g.sum(axis=0)
        return g_x, g_w

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _track(inputs, out, backward)


# ---------------------------------------------------------------------------
# optimizer primitive


def sgd_momentum_step(params, velocities, lr: float, momentum: float) -> None:
    """In-place heavy-ball update: v <- momentum*v + grad; p <- p - lr*v."""
    if len(params) != len(velocities):
        raise ParameterError("params and velocities must pair up")
    for p, v in zip(params, velocities):
        if p.grad is None:
            raise StateError("parameter has no gradient; run backward before stepping")
        if v.shape != p.data.shape:
            raise DimensionError("velocity shape must match its parameter")
        v *= momentum
        v += p.grad
        p.data -= lr * v
