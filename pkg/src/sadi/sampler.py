"""Reverse-diffusion imputation: chains from pure noise, ensembles, point estimates.

A model is anything with ``predict(xt_ta, x0_co, mask_co, t) -> eps_theta`` on
``[N, L, K]`` arrays (``t`` an integer array of length N) and, unless a schedule
is passed explicitly, a ``sched`` attribute.
"""
from dataclasses import dataclass

import numpy as np

from .diffusion import reverse_mean, reverse_variance
from .errors import ConfigError, ShapeError
from .masking import merge_imputation


@dataclass
class ImputationResult:
    samples: np.ndarray   # [S, L, K] (or [W, S, L, K] for a batch of windows)
    point: np.ndarray     # [L, K]
    spread: np.ndarray    # [L, K], zero at observed cells


def run_chains(model, x0_co, mask_co, rngs, sched=None, max_batch=512):
    """Run one reverse chain per row of ``x0_co`` [N, L, K], chain i drawing from ``rngs[i]``.

    Returns the merged samples [N, L, K]. Observed cells are copied from the input;
    target cells of ``x0_co`` are never read.
    """
    sched = sched or model.sched
    x0_co = np.asarray(x0_co, dtype=np.float64)
    mask = np.asarray(mask_co, dtype=np.float64)
    if x0_co.ndim != 3 or mask.shape != x0_co.shape or len(rngs) != x0_co.shape[0]:
        raise ShapeError("run_chains expects [N, L, K] inputs and one generator per chain")
    cond = mask > 0
    x0 = np.where(cond, x0_co, 0.0)
    out = np.empty_like(x0)
    for lo in range(0, x0.shape[0], max_batch):
        hi = min(lo + max_batch, x0.shape[0])
        c, x0c, m, gens = cond[lo:hi], x0[lo:hi], mask[lo:hi], rngs[lo:hi]
        shape = x0c.shape[1:]
        x = np.where(c, 0.0, np.stack([g.standard_normal(shape) for g in gens]))
        for t in range(sched.T, 0, -1):
            eps = model.predict(x, x0c, m, np.full(hi - lo, t))
            x = reverse_mean(x, eps, t, sched)
            var = reverse_variance(t, sched)
            if var > 0:
                x = x + np.sqrt(var) * np.stack([g.standard_normal(shape) for g in gens])
            x = np.where(c, 0.0, x)
        out[lo:hi] = merge_imputation(x0_co[lo:hi], x, m)
    return out


def sample_one(model, x0_co, mask_co, rng, sched=None):
    """One imputation ``[L, K]`` by ancestral sampling from pure noise at the targets."""
    return run_chains(model, np.asarray(x0_co)[None], np.asarray(mask_co)[None], [rng], sched)[0]


def chain_rng(seed, window, chain):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(window), int(chain)]))


def summarize(samples, x0_co, mask_co, point="mean"):
    """Point estimate and per-cell spread of samples ``[..., S, L, K]``."""
    if point == "mean":
        est = samples.mean(axis=-3)
    elif point == "median":
        est = np.median(samples, axis=-3)
    else:
        raise ConfigError(f"point estimate must be 'mean' or 'median', got {point!r}")
    s = samples.shape[-3]
    spread = samples.std(axis=-3, ddof=1) if s > 1 else np.zeros(samples.shape[:-3] + samples.shape[-2:])
    obs = np.asarray(mask_co) > 0
    return merge_imputation(x0_co, est, mask_co), np.where(obs, 0.0, spread)


def impute(model, x0_co, mask_co, S=50, seed=0, chain_seeds=None, sched=None, point="mean",
           max_batch=512):
    """Draw ``S`` independent imputations and summarise them.

    ``x0_co``/``mask_co`` may be one window ``[L, K]`` or a batch ``[W, L, K]``.
    Chain ``s`` of window ``w`` uses ``chain_seeds[s]`` when given (single window)
    and otherwise a stream derived from ``(seed, w, s)``.
    """
    if S < 1:
        raise ConfigError("need at least one sample")
    x0_co = np.asarray(x0_co, dtype=np.float64)
    mask_co = np.asarray(mask_co, dtype=np.float64)
    single = x0_co.ndim == 2
    x0b, mb = (x0_co[None], mask_co[None]) if single else (x0_co, mask_co)
    W = x0b.shape[0]
    if chain_seeds is not None:
        if not single or len(chain_seeds) != S:
            raise ConfigError("chain_seeds needs a single window and exactly S seeds")
        rngs = [np.random.default_rng(cs) for cs in chain_seeds]
    else:
        rngs = [chain_rng(seed, w, s) for w in range(W) for s in range(S)]
    flat = run_chains(model, np.repeat(x0b, S, axis=0), np.repeat(mb, S, axis=0), rngs,
                      sched, max_batch)
    samples = flat.reshape((W, S) + x0b.shape[1:])
    est, spread = summarize(samples, x0b, mb, point)
    if single:
        return ImputationResult(samples[0], est[0], spread[0])
    return ImputationResult(samples, est, spread)
