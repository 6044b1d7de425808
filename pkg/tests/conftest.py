import numpy as np
import pytest

from sadi.config import ModelConfig
from sadi.nn import ParamStore


def tiny_model_config(**kw):
    base = dict(L=6, K=3, n_fde=2, n_gta=2, d_model=8, heads=2, d_emb=8, d_ff=8, T=10)
    base.update(kw)
    return ModelConfig(**base)


def randomize(params, seed=0, scale=0.3):
    """Replace every parameter with random values so no path is zero-initialised."""
    rng = np.random.default_rng(seed)
    for _, t in params.items():
        t.data = rng.normal(0.0, scale, size=t.data.shape)
    return params


def store_of(**arrays):
    p = ParamStore()
    for k, v in arrays.items():
        p.add(k.replace("__", "."), np.asarray(v, dtype=np.float64))
    return p


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
