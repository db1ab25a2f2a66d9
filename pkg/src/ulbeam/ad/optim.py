"""Trainable parameter containers, first-order optimizers and checkpoints."""
from __future__ import annotations

import io
import json
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .tensor import Tensor

CHECKPOINT_MAGIC = "ULBEAM-CKPT 1"


class Params:
    """Ordered mapping of name -> trainable Tensor, plus optimizer state."""

    def __init__(self):
        self._items = OrderedDict()
        self.state = {}
        self.step_count = 0

    def add(self, name, value):
        if name in self._items:
            raise KeyError(f"duplicate parameter {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = name
        self._items[name] = t
        return t

    def __getitem__(self, name):
        return self._items[name]

    def __contains__(self, name):
        return name in self._items

    def __iter__(self):
        return iter(self._items.items())

    def __len__(self):
        return len(self._items)

    def names(self):
        return list(self._items)

    def zero_grad(self):
        for _, t in self:
            t.grad = None

    def grads(self):
        """Gradients in parameter order; missing gradients are zeros."""
        return [t.grad if t.grad is not None else np.zeros_like(t.data) for _, t in self]

    def snapshot(self):
        return {name: t.data.copy() for name, t in self}

    def load(self, values):
        for name, arr in values.items():
            t = self._items[name]
            arr = np.asarray(arr)
            if arr.shape != t.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {t.shape}")
            t.data = arr.astype(t.data.dtype, copy=True)


@dataclass
class OptimConfig:
    kind: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.kind!r}")


def sgd_step(params, config):
    for _, t in params:
        if t.grad is not None:
            t.data = t.data - config.lr * t.grad
    params.step_count += 1


def adam_step(params, config):
    params.step_count += 1
    n = params.step_count
    c1 = 1.0 - config.beta1 ** n
    c2 = 1.0 - config.beta2 ** n
    for name, t in params:
        if t.grad is None:
            continue
        m, v = params.state.get(name, (np.zeros_like(t.data), np.zeros(t.shape)))
        g = t.grad
        m = config.beta1 * m + (1 - config.beta1) * g
        v = config.beta2 * v + (1 - config.beta2) * np.abs(g) ** 2
        params.state[name] = (m, v)
        t.data = t.data - config.lr * (m / c1) / (np.sqrt(v / c2) + config.eps)


def step(params, config):
    if config.kind == "adam":
        adam_step(params, config)
    else:
        sgd_step(params, config)


# --- checkpoint format ------------------------------------------------------
#
# A text header followed by a raw little-endian float64 payload:
#
#   ULBEAM-CKPT 1
#   <json manifest on one line>
#   <blank line>
#   <payload bytes>
#
# The manifest lists entries {name, dtype, shape, offset} where offset counts
# float64 words into the payload; complex entries occupy two words per
# element (real, imaginary). Arbitrary JSON metadata rides along in "meta".

def save_arrays(path, arrays, meta=None):
    entries, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        cplx = np.iscomplexobj(arr)
        flat = (np.ascontiguousarray(arr, dtype="<c16").view("<f8") if cplx
                else np.ascontiguousarray(arr, dtype="<f8")).ravel()
        entries.append({"name": name, "dtype": "complex128" if cplx else "float64",
                        "shape": list(arr.shape), "offset": offset})
        chunks.append(flat)
        offset += flat.size
    manifest = {"entries": entries, "words": offset, "meta": meta or {}}
    with open(path, "wb") as fh:
        fh.write((CHECKPOINT_MAGIC + "\n" + json.dumps(manifest, sort_keys=True) + "\n\n").encode())
        for c in chunks:
            fh.write(c.tobytes())


def load_arrays(path):
    """Inverse of save_arrays: returns (OrderedDict of arrays, meta)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)
    magic = buf.readline().decode().strip()
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (header {magic!r})")
    manifest = json.loads(buf.readline().decode())
    buf.readline()
    payload = np.frombuffer(raw, dtype="<f8", offset=buf.tell(), count=manifest["words"])
    out = OrderedDict()
    for e in manifest["entries"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        if e["dtype"] == "complex128":
            words = payload[e["offset"]:e["offset"] + 2 * n]
            out[e["name"]] = words.view("<c16").reshape(e["shape"]).astype(np.complex128)
        else:
            out[e["name"]] = payload[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(np.float64)
    return out, manifest["meta"]


def save_params(path, params, meta=None):
    arrays = OrderedDict((name, t.data) for name, t in params)
    save_arrays(path, arrays, meta)
