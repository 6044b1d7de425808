"""Noise schedules and the closed-form forward / single reverse-step algebra."""
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError


@dataclass(frozen=True)
class DiffusionSchedule:
    beta: np.ndarray
    kind: str = "custom"
    beta_min: float = float("nan")
    beta_max: float = float("nan")

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        if beta.ndim != 1 or beta.size < 1:
            raise ConfigError("beta must be a non-empty vector")
        if not np.all((beta > 0) & (beta < 1)):
            raise ConfigError("every beta_t must lie in (0, 1)")
        object.__setattr__(self, "beta", beta)

    @property
    def T(self):
        return self.beta.size

    @property
    def alpha(self):
        return 1.0 - self.beta

    @property
    def alpha_bar(self):
        return np.cumprod(self.alpha)

    def alpha_bar_at(self, t):
        """``alpha_bar`` for 1-based steps, with ``alpha_bar_0 = 1``."""
        ab = np.concatenate([[1.0], self.alpha_bar])
        return ab[np.asarray(t)]

    def check_step(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T) or not np.issubdtype(t.dtype, np.integer):
            raise ConfigError(f"diffusion step out of range 1..{self.T}: {t}")
        return t

    def to_dict(self):
        return {"T": self.T, "kind": self.kind, "beta_min": self.beta_min, "beta_max": self.beta_max}


def build_schedule(T, beta_min, beta_max, kind="quadratic"):
    """``linear``: beta interpolates the endpoints; ``quadratic``: sqrt(beta) does."""
    if T < 1 or not (0 < beta_min <= beta_max < 1):
        raise ConfigError(f"invalid schedule T={T}, beta range=({beta_min}, {beta_max})")
    if kind == "linear":
        beta = np.linspace(beta_min, beta_max, T)
    elif kind == "quadratic":
        beta = np.linspace(beta_min ** 0.5, beta_max ** 0.5, T) ** 2
    else:
        raise ConfigError(f"unknown schedule kind {kind!r}")
    return DiffusionSchedule(beta, kind, float(beta_min), float(beta_max))


def schedule_from_dict(d):
    return build_schedule(int(d["T"]), float(d["beta_min"]), float(d["beta_max"]), d["kind"])


def _per_sample(v, ndim):
    # broadcast a per-sample coefficient [B] against [B, L, K]
    v = np.asarray(v, dtype=np.float64)
    return v.reshape(v.shape + (1,) * (ndim - v.ndim)) if v.ndim else v


def forward_noise(x0, t, eps, sched):
    """``sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``; ``t`` scalar or one per leading sample."""
    t = sched.check_step(t)
    ab = _per_sample(sched.alpha_bar_at(t), np.ndim(x0))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def reverse_mean(xt, eps_hat, t, sched):
    """``(x_t - beta_t / sqrt(1 - ab_t) * eps_hat) / sqrt(alpha_t)``."""
    t = sched.check_step(t)
    ab = sched.alpha_bar_at(t)
    if np.any(ab >= 1.0):
        raise NumericalError("alpha_bar_t == 1: reverse mean is undefined")
    nd = np.ndim(xt)
    beta = _per_sample(sched.beta[t - 1], nd)
    ab = _per_sample(ab, nd)
    return (xt - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(1.0 - beta)


def reverse_variance(t, sched):
    """Posterior variance ``(1 - ab_{t-1}) / (1 - ab_t) * beta_t`` (zero at t = 1)."""
    t = sched.check_step(t)
    return (1.0 - sched.alpha_bar_at(t - 1)) / (1.0 - sched.alpha_bar_at(t)) * sched.beta[t - 1]
