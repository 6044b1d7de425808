"""Differentiable primitives used by the denoiser.

All functions accept a leading batch dimension; shapes in the docstrings are
written for the trailing (per-sample) axes.
"""
import math

import numpy as np

from .. import kernels
from ..errors import ConfigError, ShapeError
from .tensor import Tensor, as_tensor


def linear(x, w, b=None):
    """``x @ w + b`` over the last axis: ``[..., d_in] -> [..., d_out]``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    xd, wd = x.data, w.data
    out = xd @ wd
    parents = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (wd.shape[1],):
            raise ShapeError(f"linear: bias shape {b.shape} != ({wd.shape[1]},)")
        out = out + b.data
        parents = (x, w, b)

    def backward(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = None
        if w.requires_grad:
            gw = xd.reshape(-1, xd.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        if b is None:
            return gx, gw
        return gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0)

    return Tensor.make(out, parents, backward)


def conv1d_dilated(x, kernel, dilation, bias=None):
    """3-tap dilated convolution along the last axis with zero "same" padding.

    ``x`` is ``[..., C, L]``, ``kernel`` is ``[C_out, C, 3]``; the output is
    ``[..., C_out, L]`` with ``out[o, t] = sum_c sum_k kernel[o, c, k+1] * x[c, t + k*dilation]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if dilation < 1:
        raise ConfigError("dilation must be >= 1")
    if x.shape[-1] < 1:
        raise ShapeError("conv1d_dilated: empty input")
    if kernel.ndim != 3 or kernel.shape[2] != 3 or kernel.shape[1] != x.shape[-2]:
        raise ShapeError(f"conv1d_dilated: kernel {kernel.shape} does not fit input {x.shape}")
    lead = x.shape[:-2]
    xd = x.data.reshape((-1,) + x.shape[-2:])
    wd = kernel.data
    out = kernels.conv1d(xd, wd, dilation)
    parents = (x, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[:, None]
        parents = (x, kernel, bias)
    out = out.reshape(lead + out.shape[-2:])

    def backward(g):
        g3 = g.reshape((-1,) + g.shape[-2:])
        dx, dw = kernels.conv1d_grad(xd, wd, dilation, g3)
        grads = (dx.reshape(x.shape), dw)
        if bias is not None:
            grads += (g3.sum(axis=(0, 2)),)
        return grads

    return Tensor.make(out, parents, backward)


def _split_heads(a, heads):
    # [..., n, d] -> [..., h, n, d/h]
    *lead, n, d = a.shape
    return a.reshape(*lead, n, heads, d // heads).swapaxes(-2, -3)


def _merge_heads(a):
    *lead, h, n, dk = a.shape
    return a.swapaxes(-2, -3).reshape(*lead, n, h * dk)


def attention_weights(q, k, heads):
    """Per-head ``softmax(q k^T / sqrt(d_k))``: ``[..., n, d] -> [..., h, n, n]``."""
    q, k = as_tensor(q), as_tensor(k)
    d = q.shape[-1]
    if d % heads:
        raise ConfigError(f"model width {d} is not divisible by {heads} heads")
    scale = 1.0 / math.sqrt(d // heads)
    qh, kh = _split_heads(q.data, heads), _split_heads(k.data, heads)
    p = kernels.softmax(np.matmul(qh, kh.swapaxes(-1, -2)) * scale)

    def backward(g):
        gs = kernels.softmax_grad(p, g) * scale
        gq = _merge_heads(np.matmul(gs, kh)) if q.requires_grad else None
        gk = _merge_heads(np.matmul(gs.swapaxes(-1, -2), qh)) if k.requires_grad else None
        return gq, gk

    return Tensor.make(p, (q, k), backward)


def attend(weights, v, heads):
    """Apply per-head weights ``[..., h, n, n]`` to values ``[..., n, d]``."""
    weights, v = as_tensor(weights), as_tensor(v)
    vh = _split_heads(v.data, heads)
    wd = weights.data
    out = _merge_heads(np.matmul(wd, vh))

    def backward(g):
        gh = _split_heads(g, heads)
        gw = np.matmul(gh, vh.swapaxes(-1, -2)) if weights.requires_grad else None
        gv = _merge_heads(np.matmul(wd.swapaxes(-1, -2), gh)) if v.requires_grad else None
        return gw, gv

    return Tensor.make(out, (weights, v), backward)


def head_mean(weights):
    """Average ``[..., h, n, n]`` over heads."""
    weights = as_tensor(weights)
    h = weights.shape[-3]
    return Tensor.make(weights.data.mean(axis=-3), (weights,),
                       lambda g: (np.repeat(np.expand_dims(g / h, -3), h, axis=-3),))


def mhsa(x, heads, p, prefix):
    """Multi-head self-attention over the second-to-last axis.

    ``p`` maps ``{prefix}.q/.k/.v/.o`` (weights) and ``{prefix}.o_b`` (output bias)
    to tensors. Returns ``(out, attn)`` where ``attn`` is the head-averaged
    weight matrix ``[..., n, n]``.
    """
    x = as_tensor(x)
    if x.shape[-1] % heads:
        raise ConfigError(f"model width {x.shape[-1]} is not divisible by {heads} heads")
    q = linear(x, p[prefix + ".q"])
    k = linear(x, p[prefix + ".k"])
    v = linear(x, p[prefix + ".v"])
    w = attention_weights(q, k, heads)
    out = linear(attend(w, v, heads), p[prefix + ".o"], p[prefix + ".o_b"])
    return out, head_mean(w)


def layer_norm(x, gain, shift, eps=1e-5):
    x, gain, shift = as_tensor(x), as_tensor(gain), as_tensor(shift)
    xd = x.data
    d = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    gd = gain.data
    out = xhat * gd + shift.data

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gd
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                        - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, d)
        return gx, (g2 * xhat.reshape(-1, d)).sum(axis=0), g2.sum(axis=0)

    return Tensor.make(out, (x, gain, shift), backward)


def _sigmoid(z):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-z))


def sigmoid(x):
    x = as_tensor(x)
    s = _sigmoid(x.data)
    return Tensor.make(s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x):
    x = as_tensor(x)
    xd = x.data
    s = _sigmoid(xd)
    return Tensor.make(xd * s, (x,), lambda g: (g * s * (1.0 + xd * (1.0 - s)),))


def relu(x):
    x = as_tensor(x)
    pos = x.data > 0
    return Tensor.make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def glu(x):
    """Gated linear unit: first half of the last axis times sigmoid of the second."""
    x = as_tensor(x)
    n = x.shape[-1]
    if n % 2:
        raise ShapeError(f"glu needs an even feature dimension, got {n}")
    h = n // 2
    a, b = x.data[..., :h], x.data[..., h:]
    s = _sigmoid(b)

    def backward(g):
        return (np.concatenate([g * s, g * a * s * (1.0 - s)], axis=-1),)

    return Tensor.make(a * s, (x,), backward)


def soft_clip(x, limit):
    """``limit * tanh(x / limit)``: identity near zero, bounded by ``limit``."""
    x = as_tensor(x)
    th = np.tanh(x.data / limit)
    return Tensor.make(limit * th, (x,), lambda g: (g * (1.0 - th * th),))


def concat(xs, axis=-1):
    xs = [as_tensor(t) for t in xs]
    sizes = [t.shape[axis] for t in xs]
    cuts = np.cumsum(sizes)[:-1]
    return Tensor.make(np.concatenate([t.data for t in xs], axis=axis), tuple(xs),
                       lambda g: tuple(np.split(g, cuts, axis=axis)))


def sinusoidal_pos_enc(length, d):
    """Transformer sinusoids: ``pe[t, 2i] = sin(t / 10000^(2i/d))``, ``pe[t, 2i+1] = cos(.)``."""
    if d % 2:
        raise ConfigError(f"positional encoding width must be even, got {d}")
    pos = np.arange(length, dtype=np.float64)[:, None]
    freq = 10000.0 ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((length, d))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq)
    return pe


def time_pos_enc(length, width):
    """Sinusoidal encoding truncated to ``width`` columns (odd widths allowed)."""
    return sinusoidal_pos_enc(length, width + width % 2)[:, :width]


def step_table(t, d_emb):
    """Raw diffusion-step features: ``[sin(t f_0..f_{h-1}), cos(t f_0..f_{h-1})]``.

    Frequencies are geometric, ``f_i = 10^(4 i / (h - 1))`` with ``h = d_emb / 2``.
    ``t`` may be a scalar or an integer array; output is ``[..., d_emb]``.
    """
    if d_emb % 2 or d_emb < 2:
        raise ConfigError(f"step embedding width must be even and >= 2, got {d_emb}")
    h = d_emb // 2
    freq = 10.0 ** (np.arange(h) * 4.0 / max(h - 1, 1))
    arg = np.asarray(t, dtype=np.float64)[..., None] * freq
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=-1)
