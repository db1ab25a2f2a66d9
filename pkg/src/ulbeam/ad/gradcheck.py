"""Central finite-difference oracle for the autodiff engine."""
from __future__ import annotations

import numpy as np

from .tensor import backward


def numeric_grad(fn, inputs, step=1e-5):
    """Central differences of the real scalar ``fn()`` w.r.t. each input.

    ``inputs`` are leaf Tensors whose ``.data`` is perturbed in place (and
    restored). Real and imaginary parts are perturbed independently and the
    result is packed as ``d/dRe + i d/dIm`` to match the engine's convention.
    """
    out = []
    for t in inputs:
        base = t.data.copy()
        g = np.zeros_like(base)
        flat = g.reshape(-1)
        parts = (1.0, 1j) if np.iscomplexobj(base) else (1.0,)
        for i in range(base.size):
            for unit in parts:
                d = np.zeros(base.size, dtype=base.dtype)
                d[i] = unit * step
                t.data = base + d.reshape(base.shape)
                fp = float(fn().data)
                t.data = base - d.reshape(base.shape)
                fm = float(fn().data)
                flat[i] += unit * (fp - fm) / (2 * step)
        t.data = base
        out.append(g)
    return out


def check_grad(fn, inputs, step=1e-5):
    """Relative error between autodiff and finite differences.

    Measured norm-wise over all inputs: ``||analytic - numeric|| / ||numeric||``
    (absolute error if the numeric gradient is identically zero).
    """
    loss = fn()
    backward(loss)
    analytic = np.concatenate([np.ravel(t.grad) if t.grad is not None else np.zeros(t.data.size) for t in inputs])
    numeric = np.concatenate([np.ravel(g) for g in numeric_grad(fn, inputs, step)])
    scale = np.linalg.norm(numeric)
    err = np.linalg.norm(analytic - numeric)
    return float(err / scale) if scale > 0 else float(err)
