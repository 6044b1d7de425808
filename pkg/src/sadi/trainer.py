"""Training loop: mask splitting, one-step noising, the three-term masked loss,
optimizer steps, validation by imputation MSE and best-checkpoint tracking.

A model is any object with ``params`` (a ParamStore), ``sched`` and
``forward(xt_ta, x0_co, mask_co, t)`` returning something with ``eps1``,
``eps2`` and ``eps_theta`` tensors. Validation additionally needs ``predict``.
"""
import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .diffusion import forward_noise
from .errors import ConfigError, DegenerateBatchError, NumericalError
from .masking import mpb_split, pb_eval_pattern, rm_split
from .metrics import masked_mse
from .nn import Adam, as_tensor, clip_grad_norm, fill_missing_grads
from .sampler import impute

log = logging.getLogger(__name__)


def masked_loss(eps, eps1, eps2, eps_theta, target_mask):
    """``(1/2N) sum_target[(eps - eps_theta)^2 + ((eps - eps1)^2 + (eps - eps2)^2) / 2]``."""
    m = np.asarray(target_mask, dtype=np.float64)
    n = float(m.sum())
    if n < 1:
        raise DegenerateBatchError("no target cells in batch")
    # the mask multiplies the differences, so non-target values never reach the loss
    eps = np.where(m > 0, np.asarray(eps, dtype=np.float64), 0.0)
    d = [(eps - as_tensor(e)) * m for e in (eps_theta, eps1, eps2)]
    total = (d[0] ** 2).sum() + ((d[1] ** 2).sum() + (d[2] ** 2).sum()) * 0.5
    return total / (2.0 * n)


def split_masks(observed, strategy, rm_fraction, pb_prob, rng):
    """Per-sample cond/target split; returns (pair, kept_index) with degenerate samples dropped."""
    pairs, keep = [], []
    for i, o in enumerate(np.asarray(observed)):
        try:
            if strategy == "RM":
                pairs.append(rm_split(o, rm_fraction, rng))
            else:
                pairs.append(mpb_split(o, rm_fraction, pb_prob, rng))
            keep.append(i)
        except DegenerateBatchError:
            pass
    return pairs, np.array(keep, dtype=int)


@dataclass
class StepStats:
    steps: int = 0
    skipped_batches: int = 0
    skipped_samples: int = 0


def train_step(batch, model, optim, rng, strategy="RM", rm_fraction=0.2, pb_prob=0.5,
               grad_clip=1.0, stats=None):
    """One optimizer step on ``batch`` (a TimeSeriesBatch). Returns the loss value.

    Samples whose mask split is degenerate are dropped; if none remain the batch
    is skipped (counted in ``stats``) and ``DegenerateBatchError`` is raised.
    """
    stats = stats if stats is not None else StepStats()
    if len(batch) == 0:
        raise ConfigError("empty batch")
    pairs, keep = split_masks(batch.observed, strategy, rm_fraction, pb_prob, rng)
    stats.skipped_samples += len(batch) - keep.size
    if keep.size == 0:
        stats.skipped_batches += 1
        raise DegenerateBatchError("every sample in the batch had a degenerate mask split")
    x0 = batch.values[keep]
    cond = np.stack([p.cond for p in pairs])
    target = np.stack([p.target for p in pairs])
    sched = model.sched
    t = rng.integers(1, sched.T + 1, size=keep.size)
    eps = rng.standard_normal(x0.shape) * target
    xt = forward_noise(x0, t, eps, sched) * target

    model.params.zero_grad()
    out = model.forward(xt, x0 * cond, cond, t)
    loss = masked_loss(eps, out.eps1, out.eps2, out.eps_theta, target)
    value = float(loss.data)
    if not math.isfinite(value):
        raise NumericalError(f"non-finite training loss {value} at optimizer step {model.params.step}")
    loss.backward()
    fill_missing_grads(model.params)
    clip_grad_norm(model.params, grad_clip)
    optim.step(model.params)
    stats.steps += 1
    return value


def validation_mse(model, val, n_features=4, block_len=8, n_blocks=2, samples=4, windows=8,
                   seed=0):
    """Imputation MSE on a fixed evaluation pattern (same windows, pattern and chains each call)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7]))
    n = len(val)
    sel = np.arange(n) if windows <= 0 or windows >= n else np.sort(rng.choice(n, windows, replace=False))
    truth, obs = val.values[sel], val.observed[sel]
    L = obs.shape[1]
    pair = pb_eval_pattern(obs, min(n_features, obs.shape[2]), min(block_len, L // n_blocks),
                           n_blocks, rng)
    res = impute(model, truth, pair.cond, S=samples, seed=seed)
    return masked_mse(res.point, truth, pair.target)


@dataclass
class FitResult:
    history: list = field(default_factory=list)   # rows: epoch, phase, train_loss, val_mse
    best_val: float = math.inf
    best_epoch: int = -1
    stats: StepStats = field(default_factory=StepStats)

    def write_history(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "phase", "train_loss", "val_mse"])
            for r in self.history:
                w.writerow([r["epoch"], r["phase"],
                            "" if r["train_loss"] is None else repr(r["train_loss"]),
                            "" if r["val_mse"] is None else repr(r["val_mse"])])


def training_phases(cfg, warm_start=False):
    """``[(strategy, epochs), ...]``; MPB runs after an RM phase unless warm-started."""
    if cfg.strategy == "RM":
        return [("RM", cfg.epochs)]
    if not warm_start and cfg.rm_epochs < 1:
        raise ConfigError("MPB training needs a warm-start checkpoint or rm_epochs >= 1")
    return ([] if warm_start else [("RM", cfg.rm_epochs)]) + [("MPB", cfg.epochs)]


def fit(model, train, cfg, val=None, warm_start=False, eval_pattern=(4, 8, 2), checkpoint=None,
        checkpoint_meta=None):
    """Train ``model`` in place and leave it holding the best-validation parameters.

    Without ``val`` the final parameters are kept. ``eval_pattern`` is
    ``(n_features, block_len, n_blocks)`` for validation. When ``checkpoint`` is
    a path the best parameters are saved there as they improve.
    """
    cfg.validate()
    phases = training_phases(cfg, warm_start)
    result = FitResult()
    optim = Adam(lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([int(cfg.seed), 1]))
    best_state = model.params.state()

    def validate(epoch, phase, train_loss):
        v = None
        if val is not None and len(val) > 0:
            v = validation_mse(model, val, *eval_pattern, samples=cfg.val_samples,
                               windows=cfg.val_windows, seed=cfg.seed)
            if v < result.best_val:
                result.best_val, result.best_epoch = v, epoch
                best_state.update(model.params.state())
                if checkpoint:
                    model.save(checkpoint, {"epoch": epoch, "val_mse": v, **(checkpoint_meta or {})})
        result.history.append({"epoch": epoch, "phase": phase, "train_loss": train_loss, "val_mse": v})
        log.info("epoch %d [%s] train_loss=%s val_mse=%s", epoch, phase, train_loss, v)

    validate(0, "init", None)
    epoch = 0
    n = len(train)
    for phase, n_epochs in phases:
        for _ in range(n_epochs):
            epoch += 1
            order = rng.permutation(n)
            losses = []
            for lo in range(0, n, cfg.batch_size):
                try:
                    losses.append(train_step(train[order[lo:lo + cfg.batch_size]], model, optim, rng,
                                             phase, cfg.rm_fraction, cfg.pb_prob, cfg.grad_clip,
                                             result.stats))
                except DegenerateBatchError:
                    continue
                except NumericalError:
                    model.params.load_state(best_state)
                    raise
            mean_loss = float(np.mean(losses)) if losses else None
            last = epoch == sum(e for _, e in phases)
            if (cfg.val_every and epoch % cfg.val_every == 0) or last:
                validate(epoch, phase, mean_loss)
            else:
                result.history.append({"epoch": epoch, "phase": phase, "train_loss": mean_loss,
                                       "val_mse": None})
    if val is not None and len(val) > 0:
        model.params.load_state(best_state)
    return result
