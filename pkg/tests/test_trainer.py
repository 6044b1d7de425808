import math

import numpy as np
import pytest

from conftest import tiny_model_config
from sadi.config import SynthSpec, TrainConfig
from sadi.data import normalize, split_rows, synth_generate, to_windows
from sadi.denoiser import Denoiser, DenoiserOutput
from sadi.diffusion import build_schedule
from sadi.errors import ConfigError, DegenerateBatchError, NumericalError
from sadi.masking import TimeSeriesBatch
from sadi.nn import Adam, ParamStore, Tensor, as_tensor
from sadi.trainer import (StepStats, fit, masked_loss, train_step, training_phases,
                          validation_mse)


def loop_loss(eps, e1, e2, et, m):
    total, n = 0.0, 0
    for idx in np.ndindex(m.shape):
        if m[idx] > 0:
            n += 1
            total += (eps[idx] - et[idx]) ** 2 + ((eps[idx] - e1[idx]) ** 2 + (eps[idx] - e2[idx]) ** 2) / 2
    return total / (2 * n)


def test_masked_loss_hand_values():
    m = np.zeros((2, 2))
    m[0, 1] = 1
    z = np.zeros((2, 2))
    eps = np.zeros((2, 2))
    eps[0, 1] = 1.0
    assert float(masked_loss(eps, z, z, z, m).data) == 1.0
    r = np.random.default_rng(0).normal(size=(2, 2))
    assert float(masked_loss(r, r, r, r, np.ones((2, 2))).data) == 0.0


def test_masked_loss_matches_loop_reference():
    r = np.random.default_rng(0)
    for _ in range(100):
        shape = tuple(r.integers(1, 5, size=3))
        m = (r.random(shape) < 0.5).astype(float)
        m.flat[0] = 1.0
        a = [r.normal(size=shape) for _ in range(4)]
        assert abs(float(masked_loss(*a, m).data) - loop_loss(*a, m)) < 1e-12


def test_masked_loss_needs_targets():
    z = np.zeros((2, 2))
    with pytest.raises(DegenerateBatchError):
        masked_loss(z, z, z, z, z)


def test_non_target_cells_are_inert_in_value_and_gradient():
    r = np.random.default_rng(1)
    m = (r.random((3, 4)) < 0.5).astype(float)
    m[0, 0] = 1
    eps = r.normal(size=(3, 4))
    preds = [Tensor(r.normal(size=(3, 4)), requires_grad=True) for _ in range(3)]
    loss = masked_loss(eps, *preds, m)
    loss.backward()
    grads = [p.grad.copy() for p in preds]
    for p in preds:
        p.grad = None
    eps2 = np.where(m > 0, eps, r.normal(size=eps.shape) * 100)   # perturb non-targets only
    loss2 = masked_loss(eps2, *preds, m)
    loss2.backward()
    assert float(loss2.data) == float(loss.data)
    for g, p in zip(grads, preds):
        np.testing.assert_array_equal(p.grad, g)
        assert np.all(p.grad[m == 0] == 0)


class ScaleStub:
    """eps_theta = eps1 = eps2 = theta * x_t: a one-parameter denoiser."""

    def __init__(self, T=10, theta=0.0):
        self.params = ParamStore()
        self.params.add("theta", np.array([theta]))
        self.sched = build_schedule(T, 1e-4, 0.5)

    def forward(self, xt, x0, mask, t):
        e = self.params["theta"] * as_tensor(xt)
        return DenoiserOutput(e, e, e, None, None)

    def predict(self, xt, x0, mask, t):
        return self.params["theta"].data * xt


def toy_batch(B=16, L=8, K=4, seed=0):
    r = np.random.default_rng(seed)
    return TimeSeriesBatch(r.normal(size=(B, L, K)), np.ones((B, L, K)))


def test_train_step_drives_stub_to_least_squares_optimum():
    # loss = (1/N) sum (eps - theta x_t)^2 per step; optimum theta* = E[eps x_t] / E[x_t^2]
    model = ScaleStub(T=10)
    sched = model.sched
    ab = sched.alpha_bar
    # with x0 ~ N(0,1) and eps ~ N(0,1): E[eps x_t] = sqrt(1-ab), E[x_t^2] = 1, averaged over t
    theta_star = float(np.mean(np.sqrt(1 - ab)))
    optim = Adam(lr=0.01)
    r = np.random.default_rng(3)
    for _ in range(1500):
        train_step(toy_batch(seed=int(r.integers(1 << 30))), model, optim, r, "RM", 0.5)
    assert model.params["theta"].data[0] == pytest.approx(theta_star, abs=0.03)


def test_train_step_is_deterministic_and_finite():
    cfg = tiny_model_config(L=8, K=4)
    traces = []
    for _ in range(2):
        m = Denoiser(cfg, seed=0)
        optim, r = Adam(), np.random.default_rng(7)
        traces.append([train_step(toy_batch(B=4, seed=s), m, optim, r, "MPB") for s in range(5)])
    assert traces[0] == traces[1]
    assert all(math.isfinite(v) for v in traces[0])


def test_train_step_long_run_stays_finite():
    model = ScaleStub(T=50)
    optim, r = Adam(lr=0.05), np.random.default_rng(0)
    for i in range(1000):
        assert math.isfinite(train_step(toy_batch(B=2, L=4, K=2, seed=i), model, optim, r, "MPB"))


def test_degenerate_samples_are_skipped_and_counted():
    model = ScaleStub()
    obs = np.ones((3, 8, 4))
    obs[1] = 0
    batch = TimeSeriesBatch(np.ones((3, 8, 4)), obs)
    stats = StepStats()
    train_step(batch, model, Adam(), np.random.default_rng(0), stats=stats)
    assert stats.skipped_samples == 1 and stats.steps == 1
    with pytest.raises(DegenerateBatchError):
        train_step(TimeSeriesBatch(np.ones((2, 8, 4)), np.zeros((2, 8, 4))), model, Adam(),
                   np.random.default_rng(0), stats=stats)
    assert stats.skipped_batches == 1


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts():
    model = ScaleStub(theta=np.inf)
    with pytest.raises(NumericalError):
        train_step(toy_batch(), model, Adam(), np.random.default_rng(0))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_fit_restores_last_good_state_on_numeric_failure():
    model = ScaleStub(theta=0.1)
    cfg = TrainConfig(epochs=3, batch_size=4, lr=1e300, grad_clip=None)
    with pytest.raises(NumericalError):
        fit(model, toy_batch(B=8), cfg)
    assert model.params["theta"].data[0] == 0.1


def test_zero_epochs_warm_start_leaves_parameters():
    m = Denoiser(tiny_model_config(L=8, K=4), seed=0)
    before = m.params.state()
    res = fit(m, toy_batch(B=4), TrainConfig(epochs=0, strategy="MPB", rm_epochs=0), warm_start=True)
    for n, v in before.items():
        np.testing.assert_array_equal(m.params[n].data, v)
    assert [r["epoch"] for r in res.history] == [0]


def test_training_phases():
    assert training_phases(TrainConfig(epochs=5)) == [("RM", 5)]
    assert training_phases(TrainConfig(epochs=3, strategy="MPB", rm_epochs=4)) == [("RM", 4), ("MPB", 3)]
    assert training_phases(TrainConfig(epochs=3, strategy="MPB"), warm_start=True) == [("MPB", 3)]
    with pytest.raises(ConfigError):
        training_phases(TrainConfig(strategy="MPB", rm_epochs=0))


def test_train_config_validation():
    for bad in (dict(strategy="XX"), dict(rm_fraction=1.0), dict(pb_prob=1.5), dict(lr=0.0),
                dict(batch_size=0), dict(epochs=-1)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()


@pytest.fixture(scope="module")
def toy_data():
    ds, _ = normalize(synth_generate(SynthSpec(K=4, L=24, count=70, seed=0)))
    tr, va, _ = split_rows(ds, 24, 0.1, 0.05)
    return to_windows(tr, 24), to_windows(va, 24)


@pytest.mark.slow
def test_fit_improves_validation_mse(toy_data, tmp_path):
    tr, va = toy_data
    cfg = tiny_model_config(L=24, K=4, d_model=16, heads=2, n_gta=1, n_fde=1, d_emb=16, d_ff=16, T=20)
    m = Denoiser(cfg, seed=0)
    tc = TrainConfig(epochs=30, batch_size=16, seed=0, val_every=10, val_samples=4, val_windows=6)
    res = fit(m, tr, tc, val=va, eval_pattern=(2, 6, 2), checkpoint=str(tmp_path / "best"))
    vals = [r["val_mse"] for r in res.history if r["val_mse"] is not None]
    assert res.best_val < vals[0]
    # the restored parameters are the best ones and the checkpoint reproduces them
    again = validation_mse(m, va, 2, 6, 2, samples=4, windows=6, seed=0)
    assert again == pytest.approx(res.best_val, abs=1e-12)
    loaded, _ = Denoiser.load(tmp_path / "best")
    assert validation_mse(loaded, va, 2, 6, 2, samples=4, windows=6, seed=0) == pytest.approx(
        res.best_val, abs=1e-12)
    res.write_history(tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,phase,train_loss,val_mse" and len(lines) == 32


def test_mpb_fit_runs_both_phases(toy_data):
    tr, va = toy_data
    cfg = tiny_model_config(L=24, K=4, d_model=8, heads=2, n_gta=1, n_fde=1, d_emb=8, d_ff=8, T=5)
    m = Denoiser(cfg, seed=0)
    res = fit(m, tr[:8], TrainConfig(epochs=1, rm_epochs=1, strategy="MPB", batch_size=8))
    assert [r["phase"] for r in res.history] == ["init", "RM", "MPB"]
