"""Named parameter storage, initialisation helpers and the checkpoint format.

Checkpoint layout (a directory)::

    manifest.json   parameter names, shapes, dtype, offsets, blob hash, metadata
    params.bin      float64 little-endian values, concatenated in manifest order
"""
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from ..errors import ConfigError, DataError
from .tensor import Tensor

DTYPE = "<f8"
MANIFEST = "manifest.json"
BLOB = "params.bin"


class ParamStore:
    """Mapping from dotted parameter path to a trainable :class:`Tensor`."""

    def __init__(self):
        self._p = {}
        self.step = 0

    def add(self, name, value):
        if name in self._p:
            raise ConfigError(f"duplicate parameter name {name!r}")
        self._p[name] = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        return self._p[name]

    def __getitem__(self, name):
        return self._p[name]

    def __contains__(self, name):
        return name in self._p

    def __len__(self):
        return len(self._p)

    def names(self):
        return sorted(self._p)

    def items(self):
        return [(n, self._p[n]) for n in self.names()]

    def num_values(self):
        return sum(t.data.size for t in self._p.values())

    def zero_grad(self):
        for t in self._p.values():
            t.grad = None

    def state(self):
        """Deep copy of the parameter values."""
        return {n: t.data.copy() for n, t in self._p.items()}

    def load_state(self, state):
        if set(state) != set(self._p):
            missing = sorted(set(self._p) - set(state))
            extra = sorted(set(state) - set(self._p))
            raise ConfigError(f"parameter set mismatch (missing={missing[:5]}, unexpected={extra[:5]})")
        for n, v in state.items():
            if v.shape != self._p[n].data.shape:
                raise ConfigError(f"shape mismatch for {n}: {v.shape} vs {self._p[n].data.shape}")
            self._p[n].data = np.array(v, dtype=np.float64)

    def blob(self):
        return b"".join(np.ascontiguousarray(t.data, dtype=DTYPE).tobytes() for _, t in self.items())


def uniform_fan_in(rng, shape, fan_in):
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def save_checkpoint(path, params, meta=None):
    """Write ``params`` (and JSON-serialisable ``meta``) to directory ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = params.blob()
    entries, offset = [], 0
    for name, t in params.items():
        entries.append({"name": name, "shape": list(t.data.shape), "offset": offset})
        offset += t.data.size
    manifest = {
        "format": "sadi-checkpoint",
        "version": 1,
        "dtype": DTYPE,
        "count": offset,
        "step": params.step,
        "sha256": hashlib.sha256(blob).hexdigest(),
        "params": entries,
        "meta": meta or {},
    }
    (path / BLOB).write_bytes(blob)
    (path / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest["sha256"]


def read_manifest(path):
    f = Path(path) / MANIFEST
    if not f.exists():
        raise DataError(f"no checkpoint manifest at {f}")
    return json.loads(f.read_text())


def load_checkpoint(path):
    """Return ``(ParamStore, manifest)``; verifies the blob hash."""
    path = Path(path)
    manifest = read_manifest(path)
    if manifest.get("format") != "sadi-checkpoint":
        raise DataError(f"{path} is not a sadi checkpoint")
    blob = (path / BLOB).read_bytes()
    if hashlib.sha256(blob).hexdigest() != manifest["sha256"]:
        raise DataError(f"checkpoint blob at {path} does not match its manifest hash")
    flat = np.frombuffer(blob, dtype=manifest["dtype"])
    if flat.size != manifest["count"]:
        raise DataError("checkpoint blob has the wrong length")
    store = ParamStore()
    for e in manifest["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        store.add(e["name"], flat[e["offset"]:e["offset"] + n].reshape(e["shape"]))
    store.step = manifest.get("step", 0)
    return store, manifest
