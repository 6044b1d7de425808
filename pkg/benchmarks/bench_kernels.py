"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--quick]

Each row reports the best-of-``repeat`` wall time per call for both
backends and the speedup. Outputs are compared before timing so a mismatch
fails loudly instead of producing a fast wrong number.
"""
import argparse
import timeit

import numpy as np

from sadi import _accel, kernels
from sadi.config import ModelConfig
from sadi.denoiser import Denoiser


def best_time(fn, repeat):
    fn()   # compile / warm caches outside the timed region
    number = max(1, int(0.2 / max(timeit.timeit(fn, number=1), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def cases(quick):
    r = np.random.default_rng(0)
    B = 8 if quick else 32
    logits = r.normal(size=(B * 4, 32, 32))
    g = r.normal(size=logits.shape)
    p = kernels.softmax_np(logits.copy())
    x = r.normal(size=(B, 8, 32))
    w = r.normal(size=(8, 8, 3))
    gy = r.normal(size=(B, 8, 32))
    ens = r.normal(size=(2000 if quick else 20000, 50))
    y = r.normal(size=ens.shape[0])
    yield "softmax", lambda: kernels.softmax(logits.copy())
    yield "softmax_grad", lambda: kernels.softmax_grad(p, g)
    yield "conv1d d=2", lambda: kernels.conv1d(x, w, 2)
    yield "conv1d_grad d=2", lambda: kernels.conv1d_grad(x, w, 2, gy)
    yield f"crps {ens.shape[0]}x{ens.shape[1]}", lambda: kernels.crps_rows(ens, y)

    cfg = ModelConfig(L=32, K=8, d_model=64, heads=4, n_gta=2, n_fde=2, d_emb=128, d_ff=128, T=50)
    model = Denoiser(cfg, seed=0)
    obs = (r.random((B, 32, 8)) < 0.8).astype(float)
    xt, x0 = r.normal(size=obs.shape) * (1 - obs), r.normal(size=obs.shape) * obs
    t = r.integers(1, 51, size=B)
    yield f"denoiser predict B={B}", lambda: model.predict(xt, x0, obs, t)


def same(a, b):
    if isinstance(a, tuple):
        return all(same(u, v) for u, v in zip(a, b))
    return np.allclose(a, b, rtol=1e-10, atol=1e-10)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller inputs")
    args = ap.parse_args(argv)

    print(f"{'case':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, fn in cases(args.quick):
        with _accel.use_backend("numpy"):
            ref = fn()
            t_np = best_time(fn, args.repeat)
        with _accel.use_backend("numba"):
            if not same(fn(), ref):
                raise SystemExit(f"{name}: backends disagree")
            t_nb = best_time(fn, args.repeat)
        print(f"{name:28s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:7.2f}x")


if __name__ == "__main__":
    main()
