"""Differentiable building blocks on top of the Tensor primitives.

Shapes follow the (batch, channels, length) convention for convolution and
pooling; norms and softmax act on the last axis.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ShapeError, SizeError
from .tensor import (
    Tensor,
    _make,
    amax,
    concat,
    div,
    mul,
    pick_rows,
    pow_const,
    sigmoid,
    sub,
    texp,
    tlog,
    tmean,
    tsum,
    ttanh,
)

NORM_EPS = 1e-5


def _tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor.constant(x)


def segment_bounds(length: int, segments: int) -> np.ndarray:
    """Boundary indices round(i*L/P) with round-half-up, i = 0..P."""
    i = np.arange(segments + 1, dtype=np.float64)
    return np.floor(i * length / segments + 0.5).astype(np.int64)


# -- convolution / pooling -------------------------------------------------------


def conv1d_same(x, kernels, bias) -> Tensor:
    """Cross-correlation with zero padding of (k-1)/2 on each side.

    x: (C_in, L) or (n, C_in, L); kernels: (C_out, C_in, k); bias: (C_out,).
    Output length equals input length.
    """
    x, kernels, bias = _tensor(x), _tensor(kernels), _tensor(bias)
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3 or kernels.data.ndim != 3:
        raise ShapeError(
            f"conv1d_same expects (n, C_in, L) and (C_out, C_in, k), "
            f"got {x.shape} and {kernels.shape}"
        )
    c_out, c_in, k = kernels.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d_same kernel size must be odd, got {k}")
    if xd.shape[1] != c_in:
        raise ShapeError(f"input channels {xd.shape[1]} != kernel C_in {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} != ({c_out},)")
    n, _, length = xd.shape
    pad = (k - 1) // 2
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)
    out_data = np.einsum("nclj,ocj->nol", windows, kernels.data, optimize=True)
    out_data = out_data + bias.data[:, None]
    out_data = out_data.astype(xd.dtype, copy=False)

    def backward(g):
        if squeeze:
            g = g[None]
        gx = gw = gb = None
        if kernels.requires_grad:
            gw = np.einsum("nol,nclj->ocj", g, windows, optimize=True)
        if bias.requires_grad:
            gb = g.sum(axis=(0, 2))
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, :, j : j + length] += np.einsum(
                    "nol,oc->ncl", g, kernels.data[:, :, j], optimize=True
                )
            gx = gxp[:, :, pad : pad + length]
            if squeeze:
                gx = gx[0]
        return gx, gw, gb

    out = _make(out_data[0] if squeeze else out_data, (x, kernels, bias), backward)
    return out


def adaptive_mean_pool(x, segments: int) -> Tensor:
    """Mean over P contiguous, exhaustive segments of the last axis.

    Boundaries at round(i*L/P); works for any L >= P.
    """
    x = _tensor(x)
    length = x.shape[-1]
    if segments < 1:
        raise SizeError(f"segments must be >= 1, got {segments}")
    if length < segments:
        raise SizeError(f"input length {length} < segments {segments}")
    bounds = segment_bounds(length, segments)
    seg_len = np.diff(bounds)
    sums = np.add.reduceat(x.data, bounds[:-1], axis=-1)
    out_data = (sums / seg_len).astype(x.dtype, copy=False)

    def backward(g):
        return (np.repeat(g / seg_len, seg_len, axis=-1).astype(x.dtype, copy=False),)

    return _make(out_data, (x,), backward)


def adaptive_max_pool(x, segments: int) -> Tensor:
    """Max over equal segments; requires L to be a multiple of P."""
    x = _tensor(x)
    length = x.shape[-1]
    if length % segments != 0:
        raise SizeError(
            f"adaptive_max_pool needs length divisible by segments, got {length}/{segments}"
        )
    seg = length // segments
    folded = x.reshape(x.shape[:-1] + (segments, seg))
    return amax(folded, axis=-1)


# -- normalization ---------------------------------------------------------------


def normalize(x, mode: str, gain, shift=None) -> Tensor:
    """layer_norm or rms_norm over the last axis, eps added inside the root."""
    x, gain = _tensor(x), _tensor(gain)
    eps = Tensor.constant(np.asarray(NORM_EPS, dtype=x.dtype))
    if mode == "layer_norm":
        if shift is None:
            raise ConfigError("layer_norm requires a shift parameter")
        shift = _tensor(shift)
        m = tmean(x, axis=-1, keepdims=True)
        centered = sub(x, m)
        var = tmean(mul(centered, centered), axis=-1, keepdims=True)
        inv = pow_const(var + eps, -0.5)
        return mul(centered, inv) * gain + shift
    if mode == "rms_norm":
        ms = tmean(mul(x, x), axis=-1, keepdims=True)
        inv = pow_const(ms + eps, -0.5)
        return mul(x, inv) * gain
    raise ConfigError(f"unknown normalization mode {mode!r}")


# -- activations / losses ----------------------------------------------------------


_GELU_C = float(np.sqrt(2.0 / np.pi))


def gelu(x) -> Tensor:
    """Tanh approximation of the Gaussian error linear unit."""
    x = _tensor(x)
    inner = mul(
        Tensor.constant(np.asarray(_GELU_C, dtype=x.dtype)),
        x + pow_const(x, 3.0) * Tensor.constant(np.asarray(0.044715, dtype=x.dtype)),
    )
    return mul(x, (ttanh(inner) + 1.0)) * Tensor.constant(
        np.asarray(0.5, dtype=x.dtype)
    )


def silu(x) -> Tensor:
    x = _tensor(x)
    return mul(x, sigmoid(x))


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis with max-subtraction for stability."""
    x = _tensor(x)
    m = Tensor.constant(x.data.max(axis=-1, keepdims=True))
    z = sub(x, m)
    e = texp(z)
    return div(e, tsum(e, axis=-1, keepdims=True))


def log_sum_exp_rows(x: Tensor) -> Tensor:
    m = Tensor.constant(x.data.max(axis=-1, keepdims=True))
    z = texp(sub(x, m))
    return tlog(tsum(z, axis=-1)) + Tensor.constant(x.data.max(axis=-1))


def cross_entropy(logits, target: int) -> Tensor:
    """-log softmax(logits)[target] for a single logits row; always >= 0."""
    logits = _tensor(logits)
    if logits.data.ndim != 1:
        raise ShapeError(f"cross_entropy expects a 1-D logits row, got {logits.shape}")
    k = logits.shape[0]
    if not (0 <= int(target) < k):
        raise IndexError(f"target {target} out of range for {k} classes")
    row = logits.reshape((1, k))
    return cross_entropy_rows(row, np.array([int(target)])).reshape(())


def cross_entropy_rows(logits: Tensor, targets) -> Tensor:
    """Per-row cross entropy for (n, K) logits and integer targets (n,)."""
    logits = _tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2:
        raise ShapeError(f"expected (n, K) logits, got {logits.shape}")
    lse = log_sum_exp_rows(logits)
    picked = pick_rows(logits, targets)
    return sub(lse, picked)


# -- resize ------------------------------------------------------------------------


def resize_matrix(src_len: int, dst_len: int):
    """Interpolation index/weight arrays: out = x[lo]*(1-w) + x[hi]*w."""
    if src_len < 2:
        raise SizeError(f"linear_resize needs source length >= 2, got {src_len}")
    if dst_len < 2:
        raise SizeError(f"linear_resize needs target length >= 2, got {dst_len}")
    pos = np.arange(dst_len, dtype=np.float64) * (src_len - 1) / (dst_len - 1)
    lo = np.floor(pos).astype(np.int64)
    lo = np.minimum(lo, src_len - 2)
    w = pos - lo
    return lo, lo + 1, w


def linear_resize(x, target: int) -> Tensor:
    """Linear interpolation of the last axis to `target` points.

    Endpoints map to endpoints; target == source length is the identity.
    """
    x = _tensor(x)
    lo, hi, w = resize_matrix(x.shape[-1], target)
    wv = w.astype(x.dtype)
    out_data = x.data[..., lo] * (1.0 - wv) + x.data[..., hi] * wv
    out_data = out_data.astype(x.dtype, copy=False)

    def backward(g):
        gx = np.zeros(x.shape, dtype=x.dtype)
        np.add.at(gx, (..., lo), g * (1.0 - wv))
        np.add.at(gx, (..., hi), g * wv)
        return (gx,)

    return _make(out_data, (x,), backward)


def linear_resize_array(x: np.ndarray, target: int) -> np.ndarray:
    """Plain-array resize used by data preparation paths (no graph)."""
    x = np.asarray(x)
    lo, hi, w = resize_matrix(x.shape[-1], target)
    w = w.astype(x.dtype if x.dtype in (np.float32, np.float64) else np.float64)
    return (x[..., lo] * (1.0 - w) + x[..., hi] * w).astype(x.dtype, copy=False)
