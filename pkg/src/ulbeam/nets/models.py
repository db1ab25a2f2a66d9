"""CSI-Net, Power-Net and the composite beamforming model.

A model maps uplink information (a complex ``N_t x U`` matrix: perfect
uplink CSI or the least-squares pilot input) to a learned downlink channel,
a power feature and, through the recovery layer, beamformers.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .. import ad
from ..ad.optim import Params, load_arrays, save_arrays
from ..errors import ConfigError, ShapeMismatch
from . import layers as L
from . import recovery

VARIANTS = ("small_fc", "massive_cnn", "multicell_fc")
RECOVERIES = ("full", "reduced", "zf", "slnr")
ROLES = ("proposed", "csi", "bf")
POWER_INPUTS = ("learned", "raw", "gram")


@dataclass
class NetSpec:
    """Architecture of one model.

    ``users`` is the number of channel columns the BS sees (``K`` in a
    single cell, ``N_c K`` in multicell); ``k`` is the number of beams.
    Widths default to the per-scenario sizes: ``4 K N_t`` with four hidden
    layers (small_fc), ``2 N_t K`` with three (massive_cnn) and
    ``2 N_t N_c U`` with three (multicell_fc).
    """

    variant: str = "small_fc"
    n_t: int = 4
    k: int = 4
    users: Optional[int] = None
    n_cells: int = 1
    role: str = "proposed"
    recovery: str = "full"
    rate_recovery: Optional[str] = None   # recovery used inside the rate loss; defaults to ``recovery``
    csi_width: Optional[int] = None
    csi_layers: Optional[int] = None
    power_width: Optional[int] = None
    power_layers: Optional[int] = None
    conv_filters: tuple = (16, 8)
    kernel: int = 3
    dropout: float = 0.3
    fc_width: int = 256
    per_user: bool = False
    power_input: str = "learned"          # "learned" (CSI-Net output) or "raw"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown net variant {self.variant!r}")
        if self.role not in ROLES:
            raise ConfigError(f"unknown net role {self.role!r}")
        if self.recovery not in RECOVERIES:
            raise ConfigError(f"unknown recovery {self.recovery!r}")
        if self.rate_recovery is None:
            self.rate_recovery = self.recovery
        if self.rate_recovery not in RECOVERIES:
            raise ConfigError(f"unknown rate recovery {self.rate_recovery!r}")
        if self.users is None:
            self.users = self.k * self.n_cells
        multicell = self.variant == "multicell_fc"
        if multicell != (self.recovery == "slnr") and self.role == "proposed":
            raise ConfigError("the SLNR recovery belongs to (and is required by) the multicell variant")
        if self.power_input not in POWER_INPUTS:
            raise ConfigError(f"power_input must be one of {POWER_INPUTS}")
        if self.power_input == "gram" and self.variant == "massive_cnn":
            raise ConfigError("the convolutional Power-Net needs the antenna axis; use 'learned' or 'raw'")
        if self.per_user and (multicell or self.users != self.k):
            raise ConfigError("per-user mode needs single-cell channels")
        if self.recovery in ("zf", "reduced") and self.k > self.n_t:
            raise ConfigError("ZF and reduced recovery need K <= N_t")
        self.conv_filters = tuple(self.conv_filters)
        base = {"small_fc": 4 * self.k * self.n_t, "massive_cnn": 2 * self.n_t * self.k,
                "multicell_fc": 2 * self.n_t * self.n_cells * self.users}[self.variant]
        if self.csi_width is None:
            self.csi_width = 4 * self.n_t if self.per_user else base
        if self.csi_layers is None:
            self.csi_layers = 4 if self.variant == "small_fc" else 3
        if self.power_width is None:
            self.power_width = base
        if self.power_layers is None:
            self.power_layers = 4 if self.variant == "small_fc" else 3
        if min(self.csi_width, self.csi_layers, self.power_width, self.power_layers) < 1:
            raise ConfigError("layer widths and counts must be positive")

    @property
    def multicell(self):
        return self.variant == "multicell_fc"

    def to_dict(self):
        d = asdict(self)
        d["conv_filters"] = list(self.conv_filters)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Normalizer:
    """Per-feature standardization of the flattened input and a scalar
    scale for channels (``H = scale * net output``)."""

    x_mean: np.ndarray
    x_std: np.ndarray
    h_scale: float

    @classmethod
    def fit(cls, x_complex, h_down):
        feats = flatten_complex(x_complex)
        std = feats.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        scale = float(np.sqrt(np.mean(np.abs(h_down) ** 2)))
        return cls(x_mean=feats.mean(axis=0), x_std=std, h_scale=scale if scale > 0 else 1.0)

    @classmethod
    def identity(cls, n):
        return cls(x_mean=np.zeros(n), x_std=np.ones(n), h_scale=1.0)

    def apply(self, feats):
        return (feats - self.x_mean) / self.x_std


def flatten_complex(X):
    """``(B, N_t, U)`` complex -> ``(B, 2 N_t U)`` real: real parts then imaginary parts."""
    X = np.asarray(X)
    B = X.shape[0]
    return np.concatenate([X.real.reshape(B, -1), X.imag.reshape(B, -1)], axis=1)


def _unflatten(out, n_t, u):
    """Inverse of ``flatten_complex`` on a tensor."""
    B = out.shape[0]
    n = n_t * u
    re = ad.getitem(out, (slice(None), slice(0, n)))
    im = ad.getitem(out, (slice(None), slice(n, 2 * n)))
    return ad.reshape(ad.make_complex(re, im), (B, n_t, u))


@dataclass
class Forward:
    H: ad.Tensor                 # learned downlink channel, physical units
    H_norm: ad.Tensor            # same, divided by the normalizer scale
    p: Optional[ad.Tensor] = None
    q: Optional[ad.Tensor] = None
    W: Optional[ad.Tensor] = None
    extras: dict = field(default_factory=dict)


class BeamModel:
    """Composite network.

    role ``proposed``: CSI-Net + Power-Net + recovery (the hybrid model).
    role ``csi``: CSI-Net alone (supervised channel learning).
    role ``bf``: a direct beamforming net taking a learned channel; same
    shape as CSI-Net with batch norm after each layer, output scaled to ``P``.
    """

    def __init__(self, spec, P, N0, norm=None):
        self.spec = spec
        self.P = float(P)
        self.N0 = float(N0)
        self.params = Params()
        self.buffers = OrderedDict()
        n_in = 2 * spec.n_t * spec.users
        self.norm = norm or Normalizer.identity(n_in)
        rng = np.random.default_rng(spec.seed)
        self._build(rng)

    # --- construction ------------------------------------------------------
    def _build(self, rng):
        s, p, b = self.spec, self.params, self.buffers
        if s.role == "bf":
            n_in = 2 * s.n_t * s.users
            self.body, w = L.fc_stack(p, b, "bf", n_in, [s.csi_width] * s.csi_layers, "tanh", rng, batch_norm=True)
            self.head = L.Dense(p, "bf.out", w, 2 * s.n_t * s.k, rng)
            return
        n_io = 2 * s.n_t if s.per_user else 2 * s.n_t * s.users
        self.csi_body, w = L.fc_stack(p, b, "csi", n_io, [s.csi_width] * s.csi_layers, "tanh", rng)
        self.csi_out = L.Dense(p, "csi.out", w, n_io, rng)
        if s.role != "proposed":
            return
        n_pow = 2 * s.users * s.users if s.power_input == "gram" else 2 * s.n_t * s.users
        if s.variant == "massive_cnn":
            c_in = 2 * s.users
            convs, c = [], c_in
            for i, f in enumerate(s.conv_filters):
                convs += [L.Conv1d(p, f"pow.conv{i}", c, f, s.kernel, rng), L.BatchNorm(p, b, f"pow.bn{i}", f),
                          L.Activation(ad.relu), L.Dropout(s.dropout)]
                c = f
            convs += [L.Flatten(), L.Dense(p, "pow.fc", c * s.n_t, s.fc_width, rng), L.Activation(ad.relu)]
            self.pow_body, w = L.Sequential(convs), s.fc_width
        else:
            self.pow_body, w = L.fc_stack(p, b, "pow", n_pow, [s.power_width] * s.power_layers, "relu", rng,
                                          batch_norm=True)
        self.head_p = L.Dense(p, "pow.p", w, s.k, rng)
        self.head_q = None if s.multicell else L.Dense(p, "pow.q", w, s.k, rng)

    # --- forward -------------------------------------------------------------
    def _features(self, X):
        X = np.asarray(X)
        s = self.spec
        if X.ndim != 3 or X.shape[1:] != (s.n_t, s.users):
            raise ShapeMismatch(f"expected inputs of shape (B, {s.n_t}, {s.users}), got {X.shape}")
        return self.norm.apply(flatten_complex(X))

    def csi_forward(self, X, ctx):
        """Learned downlink channel ``(B, N_t, U)`` in normalized units."""
        s = self.spec
        feats = self._features(X)
        B = feats.shape[0]
        if s.per_user:
            # column u of the input becomes its own sample; weights are shared
            nt, K = s.n_t, s.users
            cols = feats.reshape(B, 2, nt, K).transpose(0, 3, 1, 2).reshape(B * K, 2 * nt)
            out = self.csi_out(self.csi_body(ad.constant(cols), ctx), ctx)
            out = ad.reshape(out, (B, K, 2, nt))
            re = ad.transpose(ad.reshape(ad.getitem(out, (slice(None), slice(None), 0)), (B, K, nt)))
            im = ad.transpose(ad.reshape(ad.getitem(out, (slice(None), slice(None), 1)), (B, K, nt)))
            return ad.make_complex(re, im)
        out = self.csi_out(self.csi_body(ad.constant(feats), ctx), ctx)
        return _unflatten(out, s.n_t, s.users)

    def power_forward(self, H_norm, X, ctx):
        s = self.spec
        if s.power_input == "raw":
            src = ad.constant(self._features(X))
        elif s.power_input == "gram":
            B = H_norm.shape[0]
            A = ad.matmul(ad.herm(H_norm), H_norm)
            src = ad.concat([ad.reshape(ad.real(A), (B, -1)), ad.reshape(ad.imag(A), (B, -1))], axis=1)
        else:
            B = H_norm.shape[0]
            src = ad.concat([ad.reshape(ad.real(H_norm), (B, -1)), ad.reshape(ad.imag(H_norm), (B, -1))], axis=1)
        if s.variant == "massive_cnn":
            B = src.shape[0]
            # sequence over antennas, channels = (re, im) x users
            src = ad.transpose(ad.reshape(src, (B, 2 * s.n_t, s.users)))
            src = ad.reshape(src, (B, 2 * s.users, s.n_t))
        z = self.pow_body(src, ctx)
        p = ad.softmax(self.head_p(z, ctx), axis=-1) * self.P
        q = None if self.head_q is None else ad.softmax(self.head_q(z, ctx), axis=-1) * self.P
        return p, q

    def recover(self, H, p, q, which=None):
        which = which or self.spec.recovery
        if which == "full":
            return recovery.recover_full(H, p, q, self.N0)
        if which == "reduced":
            return recovery.recover_reduced(H, p, q, self.N0)
        if which == "zf":
            return recovery.recover_zf(H, self.P)
        return recovery.recover_slnr(H, p, self.N0)

    def forward(self, X, train=False, rng=None, H_in=None):
        """Run the model. For role ``bf`` pass the learned channel ``H_in``
        (physical units) instead of ``X``."""
        ctx = L.Context(train=train, rng=rng)
        s = self.spec
        if s.role == "bf":
            Hn = np.asarray(H_in) / self.norm.h_scale
            out = self.head(self.body(ad.constant(flatten_complex(Hn)), ctx), ctx)
            W = recovery.normalize_total(_unflatten(out, s.n_t, s.k), self.P)
            Ht = ad.constant(H_in)
            return Forward(H=Ht, H_norm=ad.constant(Hn), W=W)
        H_norm = self.csi_forward(X, ctx)
        H = H_norm * self.norm.h_scale
        if s.role == "csi":
            return Forward(H=H, H_norm=H_norm)
        p, q = self.power_forward(H_norm, X, ctx)
        return Forward(H=H, H_norm=H_norm, p=p, q=q)

    def beams(self, fwd, which=None):
        return self.recover(fwd.H, fwd.p, fwd.q, which)

    # --- persistence -------------------------------------------------------------
    def state_arrays(self):
        arrays = OrderedDict((f"param/{n}", t.data) for n, t in self.params)
        arrays.update((f"buffer/{n}", v) for n, v in self.buffers.items())
        arrays["norm/x_mean"] = self.norm.x_mean
        arrays["norm/x_std"] = self.norm.x_std
        return arrays

    def snapshot(self):
        return {k: np.array(v, copy=True) for k, v in self.state_arrays().items()}

    def restore(self, arrays):
        """Load weights, buffers and normalizer; other entries (optimizer
        moments in training checkpoints) are ignored."""
        for key, val in arrays.items():
            kind, name = key.split("/", 1)
            val = np.array(val, copy=True)
            if kind == "param":
                self.params[name].data = val
            elif kind == "buffer":
                self.buffers[name] = val
            elif kind == "norm" and name in ("x_mean", "x_std"):
                setattr(self.norm, name, val)

    def save(self, path, meta=None):
        info = {"spec": self.spec.to_dict(), "P": self.P, "N0": self.N0, "h_scale": self.norm.h_scale}
        info.update(meta or {})
        save_arrays(path, self.state_arrays(), info)

    @classmethod
    def load(cls, path):
        arrays, meta = load_arrays(path)
        spec = NetSpec.from_dict(meta["spec"])
        norm = Normalizer(x_mean=arrays["norm/x_mean"], x_std=arrays["norm/x_std"], h_scale=meta["h_scale"])
        model = cls(spec, meta["P"], meta["N0"], norm)
        model.restore(arrays)
        return model, meta
