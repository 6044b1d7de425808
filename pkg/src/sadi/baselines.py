"""Trivial imputers used as sanity references."""
import numpy as np


def mean_impute(x0_co, mask_co):
    """Fill each feature's unobserved cells with the mean of its observed cells in the window.

    A feature with no observed cell in the window gets 0 (the global mean after z-scoring).
    """
    x, m = np.asarray(x0_co, dtype=np.float64), np.asarray(mask_co) > 0
    n = m.sum(axis=-2, keepdims=True)
    s = np.where(m, x, 0.0).sum(axis=-2, keepdims=True)
    mean = np.divide(s, n, out=np.zeros_like(s), where=n > 0)
    return np.where(m, x, np.broadcast_to(mean, x.shape))


def interp_impute(x0_co, mask_co):
    """Per-feature linear interpolation in time, constant beyond the first/last observation."""
    x, m = np.asarray(x0_co, dtype=np.float64), np.asarray(mask_co) > 0
    out = np.where(m, x, 0.0)
    flat_x = out.reshape(-1, *x.shape[-2:])
    flat_m = m.reshape(-1, *x.shape[-2:])
    steps = np.arange(x.shape[-2])
    for xs, ms in zip(flat_x, flat_m):
        for k in range(xs.shape[1]):
            obs = ms[:, k]
            if obs.any() and not obs.all():
                xs[~obs, k] = np.interp(steps[~obs], steps[obs], xs[obs, k])
    return flat_x.reshape(x.shape)
