import numpy as np

from ..errors import ConsistencyError


class Adam:
    """Bias-corrected adaptive-moment optimizer over a :class:`ParamStore`."""

    def __init__(self, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0 or not (0 < betas[0] < 1 and 0 < betas[1] < 1) or eps <= 0:
            raise ValueError("invalid Adam hyperparameters")
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params):
        items = params.items()
        missing = [n for n, p in items if p.grad is None]
        if missing:
            raise ConsistencyError(f"no gradient for parameters {missing[:5]}")
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in items:
            g = p.grad
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        params.step += 1


def fill_missing_grads(params):
    """Parameters outside the graph of this step get an explicit zero gradient."""
    for _, p in params.items():
        if p.grad is None:
            p.grad = np.zeros_like(p.data)


def clip_grad_norm(params, max_norm):
    """Scale all gradients so their global L2 norm is at most ``max_norm``; returns the norm."""
    total = 0.0
    for _, p in params.items():
        if p.grad is not None:
            total += float(np.sum(p.grad * p.grad))
    norm = float(np.sqrt(total))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for _, p in params.items():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm
