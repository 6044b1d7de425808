import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sadi.errors import ConfigError, DegenerateBatchError
from sadi.masking import (TimeSeriesBatch, blackout_mask, check_pair, draw_blackout,
                          merge_imputation, mpb_split, pb_eval_pattern, place_windows, rm_split)


def observed_masks(draw_shape=st.tuples(st.integers(2, 12), st.integers(2, 6))):
    @st.composite
    def build(draw):
        L, K = draw(draw_shape)
        seed = draw(st.integers(0, 2 ** 31))
        density = draw(st.floats(0.3, 1.0))
        o = (np.random.default_rng(seed).random((L, K)) < density).astype(float)
        o[0, 0] = 1.0   # at least one observed cell
        return o
    return build()


def runs(column):
    """Number of maximal runs of ones in a 0/1 vector."""
    c = np.concatenate([[0], (column > 0).astype(int), [0]])
    return int(np.sum(np.diff(c) == 1))


def test_rm_count_hand_value():
    obs = np.ones((10, 10))
    pair = rm_split(obs, 0.25, np.random.default_rng(0))
    assert pair.target.sum() == 25
    assert not check_pair(pair, obs)


@settings(max_examples=80, deadline=None)
@given(obs=observed_masks(), frac=st.floats(0.01, 0.99), seed=st.integers(0, 10 ** 6))
def test_rm_invariants(obs, frac, seed):
    pair = rm_split(obs, frac, np.random.default_rng(seed))
    assert not check_pair(pair, obs)
    np.testing.assert_array_equal(pair.cond + pair.target, obs)
    assert pair.target.sum() == math.ceil(frac * obs.sum() - 1e-9)


def test_rm_rejects_bad_fraction_and_empty():
    with pytest.raises(ConfigError):
        rm_split(np.ones((3, 3)), 0.0, np.random.default_rng(0))
    with pytest.raises(DegenerateBatchError):
        rm_split(np.zeros((3, 3)), 0.5, np.random.default_rng(0))


def test_blackout_support_k4_l8():
    r = np.random.default_rng(0)
    feats, durs = set(), set()
    for _ in range(2000):
        spec = draw_blackout(8, 4, r)
        feats.add(len(spec.features))
        durs.add(spec.duration)
        assert np.all(spec.starts + spec.duration <= 8)
    assert feats == {1, 2}
    assert durs == {1, 2, 3, 4}


@settings(max_examples=80, deadline=None)
@given(obs=observed_masks(), seed=st.integers(0, 10 ** 6))
def test_mpb_blackout_invariants(obs, seed):
    L, K = obs.shape
    pair = mpb_split(obs, 0.2, 1.0, np.random.default_rng(seed))
    assert not check_pair(pair, obs)
    t = pair.target
    hit = np.flatnonzero(t.any(axis=0))
    assert 1 <= hit.size <= K // 2
    span = t.any(axis=1)
    assert np.flatnonzero(span).size >= 1


def test_mpb_targets_are_contiguous_per_feature_when_fully_observed():
    r = np.random.default_rng(5)
    obs = np.ones((16, 6))
    for _ in range(500):
        pair = mpb_split(obs, 0.2, 1.0, r)
        lengths = set()
        for k in range(6):
            col = pair.target[:, k]
            if col.any():
                assert runs(col) == 1
                lengths.add(int(col.sum()))
        assert len(lengths) == 1 and 1 <= lengths.pop() <= 8


def test_mpb_with_zero_pb_prob_reproduces_rm():
    obs = np.ones((3, 8, 4))
    a = mpb_split(obs, 0.3, 0.0, np.random.default_rng(9))
    b = rm_split(obs, 0.3, np.random.default_rng(9))
    np.testing.assert_array_equal(a.target, b.target)


def test_mpb_uses_both_branches():
    r = np.random.default_rng(1)
    obs = np.ones((16, 6))
    kinds = set()
    for _ in range(200):
        t = mpb_split(obs, 0.2, 0.5, r).target
        # RM hides ceil(0.2 * 96) = 20 cells; a blackout hides n_feat * dur <= 3 * 8 cells, never 20
        kinds.add("rm" if t.sum() == 20 else "pb")
    assert kinds == {"rm", "pb"}


def test_mpb_never_targets_missing_cells():
    r = np.random.default_rng(2)
    obs = (r.random((64, 12, 4)) < 0.6).astype(float)
    pair = mpb_split(obs, 0.2, 0.5, r)
    assert not np.any((pair.target > 0) & (obs == 0))


def test_mpb_rejects_tiny_shapes():
    with pytest.raises(ConfigError):
        mpb_split(np.ones((1, 4)), 0.2, 0.5, np.random.default_rng(0))


def test_place_windows_hand_case():
    starts = place_windows(100, 30, 2, np.random.default_rng(0))
    assert starts.size == 2 and starts[1] - starts[0] >= 30 and starts[1] + 30 <= 100
    with pytest.raises(ConfigError):
        place_windows(50, 30, 2, np.random.default_rng(0))


def test_place_windows_uniform_over_placements():
    # L=5, block 2, two blocks: placements (0,2) (0,3) (1,3) equally likely
    r = np.random.default_rng(0)
    counts = {}
    for _ in range(6000):
        key = tuple(place_windows(5, 2, 2, r))
        counts[key] = counts.get(key, 0) + 1
    assert set(counts) == {(0, 2), (0, 3), (1, 3)}
    for c in counts.values():
        assert abs(c - 2000) < 4 * math.sqrt(6000 * (1 / 3) * (2 / 3))


@settings(max_examples=60, deadline=None)
@given(L=st.integers(4, 40), K=st.integers(1, 8), seed=st.integers(0, 10 ** 6), data=st.data())
def test_pb_eval_pattern_invariants(L, K, seed, data):
    block = data.draw(st.integers(1, L // 2))
    nf = data.draw(st.integers(1, K))
    obs = np.ones((L, K))
    pair = pb_eval_pattern(obs, nf, block, 2, np.random.default_rng(seed))
    assert not check_pair(pair, obs)
    feats = np.flatnonzero(pair.target.any(axis=0))
    assert feats.size == nf
    rows = pair.target[:, feats[0]]
    assert rows.sum() == 2 * block
    for f in feats:
        np.testing.assert_array_equal(pair.target[:, f], rows)
    assert 1 <= runs(rows) <= 2


def test_pb_eval_pattern_shared_across_batch():
    obs = np.ones((5, 20, 4))
    pair = pb_eval_pattern(obs, 2, 4, 2, np.random.default_rng(0))
    for b in range(1, 5):
        np.testing.assert_array_equal(pair.target[b], pair.target[0])


def test_merge_checkerboard():
    L, K = 4, 3
    cb = (np.add.outer(np.arange(L), np.arange(K)) % 2).astype(float)
    a, b = np.full((L, K), 1.0), np.full((L, K), 2.0)
    out = merge_imputation(a, b, cb)
    for i in range(L):
        for k in range(K):
            assert out[i, k] == (1.0 if cb[i, k] else 2.0)


def test_merge_ignores_nan_at_targets():
    out = merge_imputation(np.array([1.0, np.nan]), np.array([5.0, 6.0]), np.array([1.0, 0.0]))
    np.testing.assert_array_equal(out, [1.0, 6.0])


def test_batch_zero_fills_unobserved():
    b = TimeSeriesBatch(np.array([[[np.nan, 2.0]]]), np.array([[[0.0, 1.0]]]))
    np.testing.assert_array_equal(b.values, [[[0.0, 2.0]]])
    with pytest.raises(ConfigError):
        TimeSeriesBatch(np.ones((1, 2, 2)), np.ones((1, 2, 3)))


def test_blackout_mask_layout():
    from sadi.masking import BlockSpec
    m = blackout_mask(BlockSpec(np.array([0, 2]), np.array([1, 3]), 2), 6, 3)
    np.testing.assert_array_equal(np.flatnonzero(m[:, 0]), [1, 2])
    np.testing.assert_array_equal(np.flatnonzero(m[:, 2]), [3, 4])
    assert m[:, 1].sum() == 0
