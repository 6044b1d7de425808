import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sadi.baselines import interp_impute, mean_impute
from sadi.diffusion import build_schedule
from sadi.errors import ConfigError
from sadi.masking import TimeSeriesBatch
from sadi.metrics import (ci_halfwidth, crps_ensemble, crps_masked, crps_quadrature, evaluate,
                          masked_mse, trial_seed)


class MeanStub:
    """Predicts zero noise; chains end near zero, i.e. the standardized mean."""

    def __init__(self, T=3):
        self.sched = build_schedule(T, 1e-4, 0.5)

    def predict(self, xt, x0, mask, t):
        return np.zeros_like(xt)


def pairwise_crps(s, y):
    s = np.asarray(s, dtype=float)
    return np.mean(np.abs(s - y)) - np.mean(np.abs(s[:, None] - s[None, :])) / 2


def test_masked_mse_hand_value():
    pred = np.array([1.0, 3.0, 100.0])
    assert masked_mse(pred, np.zeros(3), np.array([1, 1, 0])) == 5.0
    with pytest.raises(ConfigError):
        masked_mse(pred, pred, np.zeros(3))


def test_crps_hand_value():
    assert crps_ensemble([0.0, 1.0], 0.0) == 0.25
    assert crps_ensemble([2.0], 5.0) == 3.0


def test_crps_closed_form_matches_quadrature():
    r = np.random.default_rng(0)
    for _ in range(200):
        S = int(r.integers(1, 21))
        s = r.normal(size=S) * r.uniform(0.1, 3)
        y = float(r.normal() * 2)
        assert abs(crps_ensemble(s, y) - crps_quadrature(s, y)) < 1e-6


@settings(max_examples=60, deadline=None)
@given(s=st.lists(st.floats(-50, 50), min_size=1, max_size=20), y=st.floats(-50, 50))
def test_crps_matches_pairwise_form_and_is_nonnegative(s, y):
    c = crps_ensemble(s, y)
    assert c >= -1e-12
    assert c == pytest.approx(pairwise_crps(s, y), abs=1e-9)


def test_crps_rejects_non_finite():
    with pytest.raises(ConfigError):
        crps_ensemble([0.0, np.nan], 0.0)


def test_crps_masked_matches_cell_loop():
    r = np.random.default_rng(1)
    samples = r.normal(size=(7, 5, 3))
    truth = r.normal(size=(5, 3))
    target = (r.random((5, 3)) < 0.5).astype(float)
    target[0, 0] = 1
    ref = np.mean([pairwise_crps(samples[:, i, k], truth[i, k])
                   for i in range(5) for k in range(3) if target[i, k]])
    assert abs(crps_masked(samples, truth, target) - ref) < 1e-12


def test_ci_halfwidth():
    assert ci_halfwidth([1.0]) is None
    v = [1.0, 2.0, 3.0, 4.0]
    assert ci_halfwidth(v) == pytest.approx(1.96 * np.std(v, ddof=1) / 2)


def test_baselines():
    x = np.array([[1.0, 0.0], [0.0, 5.0], [3.0, 0.0], [0.0, 0.0]])
    m = np.array([[1, 0], [0, 1], [1, 0], [0, 0]], float)
    np.testing.assert_allclose(mean_impute(x, m), [[1, 5], [2, 5], [3, 5], [2, 5]])
    np.testing.assert_allclose(interp_impute(x, m), [[1, 5], [2, 5], [3, 5], [3, 5]])
    empty = np.zeros((3, 1))
    np.testing.assert_array_equal(mean_impute(empty, empty), 0.0)
    np.testing.assert_array_equal(interp_impute(empty, empty), 0.0)


def test_trial_seeds_are_distinct_and_stable():
    seeds = [trial_seed(0, k) for k in range(20)]
    assert len(set(seeds)) == 20 and seeds == [trial_seed(0, k) for k in range(20)]


@pytest.fixture(scope="module")
def test_windows():
    r = np.random.default_rng(0)
    return TimeSeriesBatch(r.normal(size=(5, 12, 4)), np.ones((5, 12, 4)))


def test_evaluate_report(test_windows, tmp_path):
    rep = evaluate(MeanStub(), test_windows, n_features=2, block_len=3, n_blocks=2, n_trials=20,
                   samples=4, base_seed=3, windows=3)
    assert len(rep.trials) == 20 and rep.mse_ci is not None and rep.crps_ci is not None
    assert rep.samples == 4 and rep.pattern["n_blocks"] == 2
    assert rep.seeds == [trial_seed(3, k) for k in range(20)]
    for t in rep.trials:
        assert t["n_targets"] == 3 * 2 * 3 * 2   # windows * features * block_len * n_blocks
        assert len(t["windows"]) == 3
    rep.write(tmp_path / "r.json", tmp_path / "t.csv")
    assert json.loads((tmp_path / "r.json").read_text())["mse_mean"] == rep.mse_mean
    assert len((tmp_path / "t.csv").read_text().splitlines()) == 21


def test_evaluate_is_reproducible(test_windows):
    kw = dict(n_features=2, block_len=3, n_blocks=2, n_trials=3, samples=3, base_seed=1)
    a = evaluate(MeanStub(), test_windows, **kw).to_json()
    assert a == evaluate(MeanStub(), test_windows, **kw).to_json()
    assert a != evaluate(MeanStub(), test_windows, **{**kw, "base_seed": 2}).to_json()


def test_evaluate_single_trial_has_no_ci(test_windows):
    rep = evaluate(MeanStub(), test_windows, n_features=1, block_len=2, n_trials=1, samples=2)
    assert rep.mse_ci is None and rep.crps_ci is None
    with pytest.raises(ConfigError):
        evaluate(MeanStub(), test_windows, n_trials=0)


def test_parallel_trials_match_serial(test_windows):
    kw = dict(n_features=2, block_len=3, n_blocks=2, n_trials=4, samples=3, base_seed=0)
    assert (evaluate(MeanStub(), test_windows, workers=2, **kw).to_json()
            == evaluate(MeanStub(), test_windows, **kw).to_json())
