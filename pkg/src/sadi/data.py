"""CSV ingestion, per-feature z-scoring, row splits, windowing and the
synthetic coupled-AR generator used for desk-scale checks."""
import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .masking import TimeSeriesBatch


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"mean": [float(v) for v in self.mean], "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


@dataclass
class Dataset:
    """Rows are time steps, columns features. Unobserved cells hold 0."""

    values: np.ndarray
    observed: np.ndarray
    names: list = field(default_factory=list)
    stats: NormStats = None

    def __post_init__(self):
        self.values = np.where(self.observed > 0, np.asarray(self.values, dtype=np.float64), 0.0)
        self.observed = np.asarray(self.observed, dtype=np.float64)
        if not self.names:
            self.names = [f"f{i}" for i in range(self.values.shape[1])]

    @property
    def n_rows(self):
        return self.values.shape[0]

    def rows(self, start, stop):
        return Dataset(self.values[start:stop], self.observed[start:stop], list(self.names), self.stats)


def load_csv(path):
    """Parse a header + rows CSV; empty cells are missing."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"input file not found: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        names = [h.strip() for h in header]
        vals, obs = [], []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names):
                raise DataError(f"{path}:{r}: expected {len(names)} columns, found {len(row)}")
            v, o = [], []
            for c, cell in enumerate(row):
                cell = cell.strip()
                if cell == "":
                    v.append(0.0)
                    o.append(0.0)
                    continue
                try:
                    x = float(cell)
                except ValueError:
                    raise DataError(f"{path}:{r}: column {names[c]!r}: not a number: {cell!r}") from None
                if not math.isfinite(x):
                    raise DataError(f"{path}:{r}: column {names[c]!r}: non-finite value {cell!r}")
                v.append(x)
                o.append(1.0)
            vals.append(v)
            obs.append(o)
    if not vals:
        raise DataError(f"{path}: no data rows")
    return Dataset(np.array(vals), np.array(obs), names)


def write_csv(path, values, observed, names):
    """Write rows with ``repr`` floats (exact round trip); unobserved cells are left empty."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for v, o in zip(np.asarray(values), np.asarray(observed)):
            w.writerow([repr(float(x)) if m > 0 else "" for x, m in zip(v, o)])


def write_mask_csv(path, mask, names):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in np.asarray(mask):
            w.writerow([str(int(m > 0)) for m in row])


def compute_stats(ds):
    n = ds.observed.sum(axis=0)
    if np.any(n == 0):
        bad = [ds.names[i] for i in np.flatnonzero(n == 0)]
        raise DataError(f"features with no observed values: {bad}")
    mean = ds.values.sum(axis=0) / n
    var = (((ds.values - mean) * ds.observed) ** 2).sum(axis=0) / n
    std = np.sqrt(var)
    if np.any(std <= 0):
        bad = [ds.names[i] for i in np.flatnonzero(std <= 0)]
        raise DataError(f"constant features cannot be normalized: {bad}")
    return NormStats(mean, std)


def normalize(ds, stats=None):
    """Z-score each feature over observed cells; returns ``(dataset, stats)``."""
    stats = stats or compute_stats(ds)
    z = (ds.values - stats.mean) / stats.std
    return Dataset(z * ds.observed, ds.observed, list(ds.names), stats), stats


def denormalize(x, stats):
    return np.asarray(x) * stats.std + stats.mean


def split_rows(ds, L, val_fraction, test_fraction):
    """Contiguous train / val / test row blocks, each a whole number of windows."""
    n_win = ds.n_rows // L
    n_val = int(round(n_win * val_fraction))
    n_test = int(round(n_win * test_fraction))
    if val_fraction > 0:
        n_val = max(n_val, 1)
    if test_fraction > 0:
        n_test = max(n_test, 1)
    n_train = n_win - n_val - n_test
    if n_train < 1:
        raise DataError(f"{ds.n_rows} rows give too few windows of length {L} to split")
    a, b = n_train * L, (n_train + n_val) * L
    return ds.rows(0, a), ds.rows(a, b), ds.rows(b, b + n_test * L)


def to_windows(ds, L):
    """Non-overlapping length-``L`` windows (a trailing partial window is dropped)."""
    n = ds.n_rows // L
    if n < 1:
        raise DataError(f"need at least {L} rows, found {ds.n_rows}")
    K = ds.values.shape[1]
    return TimeSeriesBatch(ds.values[:n * L].reshape(n, L, K), ds.observed[:n * L].reshape(n, L, K))


def default_coupling(K):
    """Ring coupling: each feature mixes with its successor."""
    return 0.6 * np.eye(K) + 0.4 * np.roll(np.eye(K), 1, axis=1)


def synth_generate(spec):
    """``x_t = rho * A x_{t-1} + eta_t`` with ``eta ~ N(0, noise_std^2 I)``, fully observed.

    Produces ``count * L`` rows after ``burn_in`` discarded steps.
    """
    K = spec.K
    A = np.asarray(spec.coupling, dtype=np.float64) if len(spec.coupling) else default_coupling(K)
    if A.shape != (K, K):
        raise ConfigError(f"coupling must be {K}x{K}, got {A.shape}")
    if not -1 < spec.rho < 1 or spec.noise_std <= 0:
        raise ConfigError("rho must lie in (-1, 1) and noise_std must be positive")
    radius = np.max(np.abs(np.linalg.eigvals(spec.rho * A)))
    if radius >= 1:
        raise ConfigError(f"unstable synthetic process: spectral radius {radius:.3f} >= 1")
    rng = np.random.default_rng(spec.seed)
    n = spec.count * spec.L
    eta = rng.normal(0.0, spec.noise_std, size=(spec.burn_in + n, K))
    M = spec.rho * A
    x = np.zeros(K)
    out = np.empty((n, K))
    for i in range(spec.burn_in + n):
        x = M @ x + eta[i]
        if i >= spec.burn_in:
            out[i - spec.burn_in] = x
    return Dataset(out, np.ones_like(out), [f"f{i}" for i in range(K)])
