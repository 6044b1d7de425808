"""Backend selection for the compiled kernels.

Numba is used when importable unless ``SADI_NUMBA`` is set to ``0``/``false``/``off``
in the environment before import. ``set_backend`` switches at runtime.
"""
import os
from contextlib import contextmanager

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None


def _env_enabled():
    flag = os.environ.get("SADI_NUMBA", "1").strip().lower()
    return flag not in ("0", "false", "no", "off")


_state = {"backend": "numba" if HAVE_NUMBA and _env_enabled() else "numpy"}


def backend():
    return _state["backend"]


def set_backend(name):
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    _state["backend"] = name


@contextmanager
def use_backend(name):
    previous = backend()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def njit(fn):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if not HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)
