"""Trainable layers on top of the autodiff engine.

Layers register their weights in a shared ``Params`` container under a
prefix; non-trainable state (batch-norm running statistics) lives in a plain
dict of arrays so it can be checkpointed next to the weights.
"""
from __future__ import annotations

import numpy as np

from .. import ad
from ..errors import ShapeMismatch


def lecun_uniform(rng, fan_in, shape):
    """Uniform init with variance ``1/fan_in``."""
    lim = np.sqrt(3.0 / fan_in)
    return rng.uniform(-lim, lim, shape)


class Dense:
    def __init__(self, params, name, n_in, n_out, rng, zero=False):
        self.n_in, self.n_out = n_in, n_out
        w = np.zeros((n_in, n_out)) if zero else lecun_uniform(rng, n_in, (n_in, n_out))
        self.W = params.add(f"{name}.W", w)
        self.b = params.add(f"{name}.b", np.zeros(n_out))

    def __call__(self, x, ctx):
        if x.shape[-1] != self.n_in:
            raise ShapeMismatch(f"dense layer expects {self.n_in} features, got {x.shape[-1]}")
        return ad.matmul(x, self.W) + self.b


class BatchNorm:
    """Normalizes each feature over the batch (and, for ``(B, C, L)``
    inputs, over the length axis). Running statistics use momentum 0.1."""

    def __init__(self, params, buffers, name, n, eps=1e-5, momentum=0.1):
        self.name, self.eps, self.momentum = name, eps, momentum
        self.gamma = params.add(f"{name}.gamma", np.ones(n))
        self.beta = params.add(f"{name}.beta", np.zeros(n))
        self.buffers = buffers
        buffers.setdefault(f"{name}.mean", np.zeros(n))
        buffers.setdefault(f"{name}.var", np.ones(n))

    def __call__(self, x, ctx):
        conv = x.ndim == 3
        axes = (0, 2) if conv else (0,)
        shape = (1, -1, 1) if conv else (1, -1)
        if ctx.train:
            mu = ad.mean(x, axis=axes, keepdims=True)
            xc = x - mu
            var = ad.mean(ad.abs2(xc), axis=axes, keepdims=True)
            n = int(np.prod([x.shape[a] for a in axes]))
            m = self.momentum
            self.buffers[f"{self.name}.mean"] = (1 - m) * self.buffers[f"{self.name}.mean"] + m * mu.data.ravel()
            unbiased = var.data.ravel() * n / max(n - 1, 1)
            self.buffers[f"{self.name}.var"] = (1 - m) * self.buffers[f"{self.name}.var"] + m * unbiased
            xhat = xc / ad.sqrt(var + self.eps)
        else:
            mu = self.buffers[f"{self.name}.mean"].reshape(shape)
            var = self.buffers[f"{self.name}.var"].reshape(shape)
            xhat = (x - mu) * (1.0 / np.sqrt(var + self.eps))
        return xhat * ad.reshape(self.gamma, shape) + ad.reshape(self.beta, shape)


class Dropout:
    def __init__(self, rate):
        if not 0 <= rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        self.rate = rate

    def __call__(self, x, ctx):
        if not ctx.train or self.rate == 0:
            return x
        keep = ctx.rng.random(x.shape) >= self.rate
        return ad.where_const(keep / (1.0 - self.rate), x)


class Conv1d:
    def __init__(self, params, name, c_in, c_out, kernel, rng):
        self.w = params.add(f"{name}.w", lecun_uniform(rng, c_in * kernel, (c_out, c_in, kernel)))
        self.b = params.add(f"{name}.b", np.zeros(c_out))

    def __call__(self, x, ctx):
        return ad.conv1d(x, self.w, self.b)


class Activation:
    def __init__(self, fn):
        self.fn = fn

    def __call__(self, x, ctx):
        return self.fn(x)


class Flatten:
    def __call__(self, x, ctx):
        return ad.reshape(x, (x.shape[0], -1))


class Context:
    """Forward-pass mode: ``train`` toggles batch statistics and dropout."""

    def __init__(self, train=False, rng=None):
        self.train = train
        self.rng = rng if rng is not None else np.random.default_rng(0)


class Sequential:
    def __init__(self, layers):
        self.layers = list(layers)

    def __call__(self, x, ctx):
        for layer in self.layers:
            x = layer(x, ctx)
        return x


ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu}


def fc_stack(params, buffers, name, n_in, widths, activation, rng, batch_norm=False, dropout=0.0):
    """Hidden fully connected layers: dense, optional batch norm, activation, optional dropout."""
    layers, width = [], n_in
    for i, w in enumerate(widths):
        layers.append(Dense(params, f"{name}.fc{i}", width, w, rng))
        if batch_norm:
            layers.append(BatchNorm(params, buffers, f"{name}.bn{i}", w))
        layers.append(Activation(ACTIVATIONS[activation]))
        if dropout:
            layers.append(Dropout(dropout))
        width = w
    return Sequential(layers), width
