"""Mask generation for training (random missing, mixed partial blackout) and for
partial-blackout evaluation, plus the final observed/imputed merge.

All masks are float arrays of 0/1. Generators take a ``numpy.random.Generator``
and accept either one ``[L, K]`` observation mask or a ``[B, L, K]`` batch, in
which case every sample gets an independent draw.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateBatchError


@dataclass
class TimeSeriesBatch:
    values: np.ndarray     # [B, L, K], zero where unobserved
    observed: np.ndarray   # [B, L, K] in {0, 1}

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.observed = np.asarray(self.observed, dtype=np.float64)
        if self.values.shape != self.observed.shape:
            raise ConfigError("values and observed mask must have the same shape")
        self.values = np.where(self.observed > 0, self.values, 0.0)

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, idx):
        return TimeSeriesBatch(self.values[idx], self.observed[idx])


@dataclass
class MaskPair:
    cond: np.ndarray
    target: np.ndarray


@dataclass
class BlockSpec:
    features: np.ndarray
    starts: np.ndarray
    duration: int


def _per_sample(fn, observed, *args):
    observed = np.asarray(observed, dtype=np.float64)
    if observed.ndim == 2:
        return fn(observed, *args)
    pairs = [fn(o, *args) for o in observed]
    return MaskPair(np.stack([p.cond for p in pairs]), np.stack([p.target for p in pairs]))


def _target_count(fraction, n_obs):
    # tolerate representation error in fraction * n (0.29 * 100 = 28.999999999999996)
    return math.ceil(fraction * n_obs - 1e-9)


def _rm_one(observed, fraction, rng):
    idx = np.flatnonzero(observed.reshape(-1) > 0)
    n = _target_count(fraction, idx.size)
    if idx.size == 0 or n < 1:
        raise DegenerateBatchError("random-missing split produced no targets")
    target = np.zeros(observed.size)
    target[rng.choice(idx, size=n, replace=False)] = 1.0
    target = target.reshape(observed.shape)
    return MaskPair(observed - target, target)


def rm_split(observed, fraction, rng):
    """Hide ``ceil(fraction * #observed)`` observed cells, drawn uniformly without replacement."""
    if not 0 < fraction < 1:
        raise ConfigError(f"fraction must lie in (0, 1), got {fraction}")
    return _per_sample(_rm_one, observed, fraction, rng)


def draw_blackout(L, K, rng):
    """Feature subset of size U{1..K//2}, one duration U{1..L//2}, a uniform start per feature."""
    n_feat = int(rng.integers(1, K // 2 + 1))
    duration = int(rng.integers(1, L // 2 + 1))
    features = np.sort(rng.choice(K, size=n_feat, replace=False))
    starts = rng.integers(0, L - duration + 1, size=n_feat)
    return BlockSpec(features, starts, duration)


def blackout_mask(spec, L, K):
    m = np.zeros((L, K))
    for f, s in zip(spec.features, spec.starts):
        m[s:s + spec.duration, f] = 1.0
    return m


def _mpb_one(observed, rm_fraction, pb_prob, rng, max_tries):
    L, K = observed.shape
    # no coin is drawn at pb_prob 0 or 1, so pb_prob=0 reproduces rm_split draw for draw
    use_pb = pb_prob >= 1 or (pb_prob > 0 and rng.random() < pb_prob)
    if not use_pb:
        return _rm_one(observed, rm_fraction, rng)
    for _ in range(max_tries):
        target = blackout_mask(draw_blackout(L, K, rng), L, K) * observed
        if target.any():
            return MaskPair(observed - target, target)
    raise DegenerateBatchError(f"no blackout hit an observed cell in {max_tries} tries")


def mpb_split(observed, rm_fraction, pb_prob, rng, max_tries=50):
    """With probability ``pb_prob`` a partial blackout, otherwise :func:`rm_split`."""
    observed = np.asarray(observed, dtype=np.float64)
    L, K = observed.shape[-2:]
    if L < 2 or K < 2:
        raise ConfigError("mixed partial blackout needs L >= 2 and K >= 2")
    if not 0 < rm_fraction < 1 or not 0 <= pb_prob <= 1:
        raise ConfigError("rm_fraction must lie in (0, 1) and pb_prob in [0, 1]")
    return _per_sample(_mpb_one, observed, rm_fraction, pb_prob, rng, max_tries)


def place_windows(L, block_len, n_blocks, rng):
    """Uniformly random non-overlapping windows; returns sorted start indices."""
    free = L - n_blocks * block_len
    if block_len < 1 or n_blocks < 1 or free < 0:
        raise ConfigError(f"cannot place {n_blocks} disjoint windows of length {block_len} in {L} steps")
    # distinct sorted draws from free + n_blocks slots <-> placements with gaps >= 0
    c = np.sort(rng.choice(free + n_blocks, size=n_blocks, replace=False))
    return c + np.arange(n_blocks) * (block_len - 1)


def pb_eval_pattern(observed, n_features, block_len, n_blocks, rng):
    """Evaluation blackout: one feature subset, ``n_blocks`` disjoint windows of ``block_len``.

    Observed cells inside (subset x windows) become targets; everything else
    observed stays conditioning. The pattern is drawn once per call and shared
    by every sample of a ``[B, L, K]`` batch (one call = one evaluation trial).
    """
    observed = np.asarray(observed, dtype=np.float64)
    L, K = observed.shape[-2:]
    if not 1 <= n_features <= K:
        raise ConfigError(f"n_features must lie in 1..{K}")
    feats = rng.choice(K, size=n_features, replace=False)
    starts = place_windows(L, block_len, n_blocks, rng)
    block = np.zeros((L, K))
    for s in starts:
        block[s:s + block_len, feats] = 1.0
    target = block * observed
    return MaskPair(observed - target, target)


def merge_imputation(x0_co, x_ta_hat, mask_co):
    """Observed values where ``mask_co`` is 1, imputed values elsewhere."""
    return np.where(np.asarray(mask_co) > 0, x0_co, x_ta_hat)


def check_pair(pair, observed):
    """Return a list of invariant violations (empty when the pair is valid)."""
    problems = []
    c, t, o = pair.cond > 0, pair.target > 0, np.asarray(observed) > 0
    if np.any(c & t):
        problems.append("cond and target overlap")
    if np.any((c | t) & ~o):
        problems.append("mask outside observed cells")
    if not t.any():
        problems.append("empty target")
    return problems
