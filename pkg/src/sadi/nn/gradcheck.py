import numpy as np

from ..errors import NumericalError
from .tensor import no_grad


def grad_check(f, params, h=1e-4, rng=None, max_per_param=None):
    """Max relative error between reverse-mode and central-difference gradients.

    ``f(params)`` must return a scalar :class:`Tensor`. The error for each
    coordinate is ``|g_ad - g_fd| / max(1, |g_ad|, |g_fd|)``. With
    ``max_per_param`` only that many randomly chosen coordinates of each
    parameter are probed.
    """
    params.zero_grad()
    out = f(params)
    if not np.isfinite(out.data).all():
        raise NumericalError("grad_check: objective is not finite")
    out.backward()
    worst = 0.0
    for name, p in params.items():
        g_ad = p.grad if p.grad is not None else np.zeros_like(p.data)
        idx = np.arange(p.data.size)
        if max_per_param is not None and idx.size > max_per_param:
            idx = (rng or np.random.default_rng(0)).choice(idx, max_per_param, replace=False)
        flat = p.data.reshape(-1)
        for i in idx:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                up = float(f(params).data)
                flat[i] = orig - h
                down = float(f(params).data)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericalError(f"grad_check: objective not finite around {name}[{i}]")
            g_fd = (up - down) / (2.0 * h)
            ga = g_ad.reshape(-1)[i]
            worst = max(worst, abs(ga - g_fd) / max(1.0, abs(ga), abs(g_fd)))
    params.zero_grad()
    return worst
