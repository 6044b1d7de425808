"""Hot inner loops: row softmax, dilated 3-tap convolution, ensemble CRPS.

Every kernel has a vectorised numpy implementation (``*_np``) and a loop
implementation compiled with numba (``*_nb``). The public functions dispatch on
:func:`sadi._accel.backend`; both paths agree to rounding (see
``tests/test_kernels.py`` and ``benchmarks/bench_kernels.py``).
"""
import math

import numpy as np

from . import _accel
from ._accel import njit


# ---------------------------------------------------------------- softmax

def softmax_np(x):
    z = x - x.max(axis=-1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=-1, keepdims=True)
    return z


def softmax_grad_np(p, g):
    return p * (g - (g * p).sum(axis=-1, keepdims=True))


@njit
def _shift_by_row_max(x, out):
    m, n = x.shape
    for i in range(m):
        mx = x[i, 0]
        for j in range(1, n):
            if x[i, j] > mx:
                mx = x[i, j]
        for j in range(n):
            out[i, j] = x[i, j] - mx


@njit
def _normalize_rows(z):
    m, n = z.shape
    for i in range(m):
        s = 0.0
        for j in range(n):
            s += z[i, j]
        inv = 1.0 / s
        for j in range(n):
            z[i, j] *= inv


@njit
def _softmax_grad_rows(p, g, out):
    m, n = p.shape
    for i in range(m):
        dot = 0.0
        for j in range(n):
            dot += g[i, j] * p[i, j]
        for j in range(n):
            out[i, j] = p[i, j] * (g[i, j] - dot)


def softmax_nb(x):
    flat = np.ascontiguousarray(x).reshape(-1, x.shape[-1])
    out = np.empty_like(flat)
    _shift_by_row_max(flat, out)
    # numpy's SIMD exp beats a scalar libm call inside the jitted loop
    np.exp(out, out=out)
    _normalize_rows(out)
    return out.reshape(x.shape)


def softmax_grad_nb(p, g):
    pf = np.ascontiguousarray(p).reshape(-1, p.shape[-1])
    gf = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
    out = np.empty_like(pf)
    _softmax_grad_rows(pf, gf, out)
    return out.reshape(p.shape)


def softmax(x):
    """Softmax over the last axis."""
    if _accel.backend() == "numba":
        return softmax_nb(x)
    return softmax_np(x)


def softmax_grad(p, g):
    """Vector-Jacobian product of :func:`softmax` given its output ``p``."""
    if _accel.backend() == "numba":
        return softmax_grad_nb(p, g)
    return softmax_grad_np(p, g)


# ------------------------------------------------------- dilated conv1d

def conv1d_np(x, w, dilation):
    # x (B, C, L), w (O, C, 3), zero "same" padding of width ``dilation``
    b, c, n = x.shape
    d = dilation
    xp = np.zeros((b, c, n + 2 * d), dtype=x.dtype)
    xp[:, :, d:d + n] = x
    out = np.matmul(w[:, :, 0], xp[:, :, 0:n])
    out += np.matmul(w[:, :, 1], xp[:, :, d:d + n])
    out += np.matmul(w[:, :, 2], xp[:, :, 2 * d:2 * d + n])
    return out


def conv1d_grad_np(x, w, dilation, g):
    b, c, n = x.shape
    d = dilation
    xp = np.zeros((b, c, n + 2 * d), dtype=x.dtype)
    xp[:, :, d:d + n] = x
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    g2 = g.transpose(1, 0, 2).reshape(g.shape[1], -1)
    for j in range(3):
        sl = slice(j * d, j * d + n)
        dxp[:, :, sl] += np.matmul(w[:, :, j].T, g)
        dw[:, :, j] = g2 @ xp[:, :, sl].transpose(1, 0, 2).reshape(c, -1).T
    return dxp[:, :, d:d + n], dw


@njit
def _conv1d_loop(x, w, dilation, out):
    b, c, n = x.shape
    o = w.shape[0]
    for bi in range(b):
        for oi in range(o):
            for t in range(n):
                acc = 0.0
                for ci in range(c):
                    for j in range(3):
                        s = t + (j - 1) * dilation
                        if 0 <= s < n:
                            acc += w[oi, ci, j] * x[bi, ci, s]
                out[bi, oi, t] = acc


@njit
def _conv1d_grad_loop(x, w, dilation, g, dx, dw):
    b, c, n = x.shape
    o = w.shape[0]
    for bi in range(b):
        for oi in range(o):
            for t in range(n):
                gv = g[bi, oi, t]
                for ci in range(c):
                    for j in range(3):
                        s = t + (j - 1) * dilation
                        if 0 <= s < n:
                            dx[bi, ci, s] += w[oi, ci, j] * gv
                            dw[oi, ci, j] += x[bi, ci, s] * gv


def conv1d_nb(x, w, dilation):
    x = np.ascontiguousarray(x)
    out = np.empty((x.shape[0], w.shape[0], x.shape[2]), dtype=x.dtype)
    _conv1d_loop(x, np.ascontiguousarray(w), dilation, out)
    return out


def conv1d_grad_nb(x, w, dilation, g):
    x = np.ascontiguousarray(x)
    dx = np.zeros_like(x)
    dw = np.zeros_like(w)
    _conv1d_grad_loop(x, np.ascontiguousarray(w), dilation, np.ascontiguousarray(g), dx, dw)
    return dx, dw


def conv1d(x, w, dilation):
    if _accel.backend() == "numba":
        return conv1d_nb(x, w, dilation)
    return conv1d_np(x, w, dilation)


def conv1d_grad(x, w, dilation, g):
    """Returns ``(dx, dw)`` for upstream gradient ``g``."""
    if _accel.backend() == "numba":
        return conv1d_grad_nb(x, w, dilation, g)
    return conv1d_grad_np(x, w, dilation, g)


# ------------------------------------------------------------------ CRPS

def crps_rows_np(samples, y):
    # samples (N, S), y (N,)
    s = samples.shape[1]
    xs = np.sort(samples, axis=1)
    abs_term = np.abs(xs - y[:, None]).mean(axis=1)
    # sum_{i,j} |x_i - x_j| = 2 * sum_i (2i - S + 1) x_(i)
    coef = 2.0 * np.arange(s) - s + 1.0
    pair = 2.0 * (xs * coef).sum(axis=1)
    return abs_term - pair / (2.0 * s * s)


@njit
def _crps_sorted_rows(xs, y, out):
    m, s = xs.shape
    for i in range(m):
        a = 0.0
        p = 0.0
        for j in range(s):
            a += abs(xs[i, j] - y[i])
            p += (2.0 * j - s + 1.0) * xs[i, j]
        out[i] = a / s - p / (s * s)


def crps_rows_nb(samples, y):
    # numpy's vectorised sort is faster than numba's compiled quicksort on short rows
    xs = np.sort(np.asarray(samples, dtype=np.float64), axis=1)
    out = np.empty(xs.shape[0])
    _crps_sorted_rows(xs, np.ascontiguousarray(y, dtype=np.float64), out)
    return out


def crps_rows(samples, y):
    """Closed-form empirical-CDF CRPS for each row of ``samples`` against ``y``."""
    if _accel.backend() == "numba":
        return crps_rows_nb(samples, y)
    return crps_rows_np(samples, y)
