"""Imputation scores, the evaluation protocol and its report."""
import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__, kernels
from .baselines import interp_impute, mean_impute
from .errors import ConfigError
from .masking import pb_eval_pattern
from .sampler import impute


def _targets(target):
    t = np.asarray(target) > 0
    if not t.any():
        raise ConfigError("no target cells to score")
    return t


def masked_mse(pred, truth, target):
    t = _targets(target)
    d = (np.asarray(pred) - np.asarray(truth))[t]
    return float(np.mean(d * d))


def crps_ensemble(samples, y):
    """Empirical-CDF CRPS: ``mean|x_i - y| - sum_ij |x_i - x_j| / (2 S^2)``."""
    samples = np.asarray(samples, dtype=np.float64).reshape(1, -1)
    if not np.all(np.isfinite(samples)) or not math.isfinite(y):
        raise ConfigError("CRPS needs finite samples and observation")
    return float(kernels.crps_rows(samples, np.array([float(y)]))[0])


def crps_quadrature(samples, y, n_grid=100_000):
    """Numerical integral of ``(F(x) - 1{x >= y})^2`` for the ensemble's empirical CDF.

    The uniform grid over ``[min - 3 r, max + 3 r]`` is refined with the sample
    points and ``y``; trapezoids use one-sided limits at those break points, where
    the integrand jumps, so the rule is exact up to rounding.
    """
    xs = np.sort(np.asarray(samples, dtype=np.float64))
    lo, hi = min(xs[0], y), max(xs[-1], y)
    r = (hi - lo) or 1.0
    grid = np.union1d(np.linspace(lo - 3 * r, hi + 3 * r, n_grid), np.append(xs, y))
    a, b = grid[:-1], grid[1:]
    # right limit at a, left limit at b
    f_right = (np.searchsorted(xs, a, side="right") / xs.size - (a >= y)) ** 2
    f_left = (np.searchsorted(xs, b, side="left") / xs.size - (b > y)) ** 2
    return float(np.sum((f_right + f_left) * 0.5 * (b - a)))


def crps_masked(samples, truth, target):
    """Mean CRPS over target cells; ``samples`` is ``[..., S, L, K]``, truth ``[..., L, K]``."""
    t = _targets(target)
    s = np.moveaxis(np.asarray(samples, dtype=np.float64), -3, -1)   # [..., L, K, S]
    return float(np.mean(kernels.crps_rows(s[t], np.asarray(truth, dtype=np.float64)[t])))


def ci_halfwidth(values):
    """95% normal-approximation half-width; ``None`` for fewer than two values."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return None
    return float(1.96 * v.std(ddof=1) / math.sqrt(v.size))


@dataclass
class EvalReport:
    trials: list
    mse_mean: float
    mse_ci: float
    crps_mean: float
    crps_ci: float
    baseline_mean_mse: float
    baseline_interp_mse: float
    pattern: dict
    samples: int
    base_seed: int
    meta: dict = field(default_factory=dict)

    @property
    def mse(self):
        return [t["mse"] for t in self.trials]

    @property
    def crps(self):
        return [t["crps"] for t in self.trials]

    @property
    def seeds(self):
        return [t["seed"] for t in self.trials]

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write(self, json_path, csv_path=None):
        with open(json_path, "w") as fh:
            fh.write(self.to_json())
        if csv_path:
            cols = ["trial", "seed", "n_targets", "mse", "crps", "baseline_mean_mse",
                    "baseline_interp_mse"]
            with open(csv_path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(cols)
                for i, t in enumerate(self.trials):
                    w.writerow([i] + [repr(t[c]) if isinstance(t[c], float) else t[c] for c in cols[1:]])


def trial_seed(base_seed, k):
    return int(np.random.SeedSequence([int(base_seed), int(k)]).generate_state(1)[0])


def run_trial(model, values, observed, seed, n_features, block_len, n_blocks, samples, windows,
              point="mean", max_batch=512):
    """One evaluation trial: fresh blackout pattern, imputation and scores."""
    rng = np.random.default_rng(seed)
    n = values.shape[0]
    sel = np.arange(n)
    if 0 < windows < n:
        sel = np.sort(rng.choice(n, size=windows, replace=False))
    truth, obs = values[sel], observed[sel]
    pair = pb_eval_pattern(obs, n_features, block_len, n_blocks, rng)
    res = impute(model, truth, pair.cond, S=samples, seed=seed, point=point, max_batch=max_batch)
    return {
        "seed": int(seed),
        "windows": [int(i) for i in sel],
        "n_targets": int(pair.target.sum()),
        "mse": masked_mse(res.point, truth, pair.target),
        "crps": crps_masked(res.samples, truth, pair.target),
        "baseline_mean_mse": masked_mse(mean_impute(truth, pair.cond), truth, pair.target),
        "baseline_interp_mse": masked_mse(interp_impute(truth, pair.cond), truth, pair.target),
    }


def _trial_job(args):
    return run_trial(*args)


def evaluate(model, test, n_features=4, block_len=8, n_blocks=2, n_trials=20, samples=50,
             base_seed=0, windows=0, point="mean", workers=1, max_batch=512, meta=None):
    """Partial-blackout evaluation over ``n_trials`` independent patterns.

    ``test`` is a :class:`TimeSeriesBatch` of held-out windows. MSE scores the
    point estimate, CRPS the sample ensemble; both pooled over target cells.
    """
    if n_trials < 1:
        raise ConfigError("n_trials must be >= 1")
    jobs = [(model, test.values, test.observed, trial_seed(base_seed, k), n_features, block_len,
             n_blocks, samples, windows, point, max_batch) for k in range(n_trials)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            trials = list(pool.map(_trial_job, jobs))
    else:
        trials = [_trial_job(j) for j in jobs]
    col = lambda name: [t[name] for t in trials]
    return EvalReport(
        trials=trials,
        mse_mean=float(np.mean(col("mse"))),
        mse_ci=ci_halfwidth(col("mse")),
        crps_mean=float(np.mean(col("crps"))),
        crps_ci=ci_halfwidth(col("crps")),
        baseline_mean_mse=float(np.mean(col("baseline_mean_mse"))),
        baseline_interp_mse=float(np.mean(col("baseline_interp_mse"))),
        pattern={"n_features": n_features, "block_len": block_len, "n_blocks": n_blocks,
                 "windows": windows, "point": point},
        samples=samples,
        base_seed=int(base_seed),
        meta={"version": __version__, **(meta or {})},
    )
