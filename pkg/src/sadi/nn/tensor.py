"""A minimal reverse-mode autodiff tensor over numpy arrays.

Only what the denoiser needs: elementwise arithmetic with numpy broadcasting,
a handful of reductions and axis swaps. Heavier primitives live in
:mod:`sadi.nn.functional` and register their own backward closures.
"""
from contextlib import contextmanager

import numpy as np

_grad_enabled = [True]


@contextmanager
def no_grad():
    """Disable graph construction (inference)."""
    prev = _grad_enabled[0]
    _grad_enabled[0] = False
    try:
        yield
    finally:
        _grad_enabled[0] = prev


def grad_enabled():
    return _grad_enabled[0]


def unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.name = name

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    # ---------------------------------------------------------- graph
    @staticmethod
    def make(data, parents, backward):
        """Create a result node; ``backward(g)`` returns one grad per parent (or None)."""
        out = Tensor(data)
        if grad_enabled() and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        return out

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                grads[key] = pg if key not in grads else grads[key] + pg

    # ----------------------------------------------------- arithmetic
    def __add__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor.make(self.data + other.data, (self, other),
                           lambda g: (unbroadcast(g, a), unbroadcast(g, b)))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self.shape, other.shape
        return Tensor.make(self.data - other.data, (self, other),
                           lambda g: (unbroadcast(g, a), unbroadcast(-g, b)))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        x, y = self.data, other.data
        return Tensor.make(x * y, (self, other),
                           lambda g: (unbroadcast(g * y, x.shape), unbroadcast(g * x, y.shape)))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return self * (1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return Tensor.make(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, p):
        if p != 2:
            raise NotImplementedError("only squaring is supported")
        x = self.data
        return Tensor.make(x * x, (self,), lambda g: (2.0 * g * x,))

    # ------------------------------------------------------- reductions
    def sum(self):
        shape = self.shape
        return Tensor.make(np.array(self.data.sum()), (self,),
                           lambda g: (np.broadcast_to(g, shape).copy(),))

    def mean(self):
        return self.sum() * (1.0 / self.data.size)

    def swapaxes(self, a, b):
        return Tensor.make(self.data.swapaxes(a, b), (self,), lambda g: (g.swapaxes(a, b),))

    def unsqueeze(self, axis):
        return Tensor.make(np.expand_dims(self.data, axis), (self,),
                           lambda g: (np.squeeze(g, axis=axis),))


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)
