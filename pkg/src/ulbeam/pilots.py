"""DFT pilots, received-pilot simulation, least-squares preprocessing and
the linear MMSE channel estimator used by the separate-estimation baselines.

Shapes follow the signal model ``Y = H X + N`` with ``H`` of shape
``(..., N_t, K)``, pilots ``X`` of shape ``(K, L)`` and ``Y`` of shape
``(..., N_t, L)``.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from .ad.optim import load_arrays, save_arrays
from .errors import DegenerateTraining, ShapeMismatch

RIDGE = 1e-12


def _herm(a):
    return np.conj(np.swapaxes(a, -1, -2))


def make_dft_pilots(k_total, length, power):
    """``sqrt(P)`` times the leading ``K x L`` block of the unnormalized
    ``max(K, L)``-point DFT matrix; every entry has magnitude ``sqrt(P)``."""
    if k_total < 1 or length < 1 or power <= 0:
        raise ValueError("pilot dimensions and power must be positive")
    n = max(k_total, length)
    idx = np.arange(n)
    F = np.exp(-2j * np.pi * np.outer(idx, idx) / n)
    return np.sqrt(power) * F[:k_total, :length]


def complex_noise(rng, shape, variance):
    """Circularly symmetric Gaussian entries with the given variance."""
    if variance == 0:
        return np.zeros(shape, dtype=np.complex128)
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def receive_pilots(H, X, noise_var, rng):
    """Received uplink pilot block ``Y = H X + N``."""
    H = np.asarray(H)
    if H.shape[-1] != X.shape[0]:
        raise ShapeMismatch(f"channel has {H.shape[-1]} users but pilots have {X.shape[0]} rows")
    clean = H @ X
    return clean + complex_noise(rng, clean.shape, noise_var)


def ls_preprocess(Y, X, power):
    """Least-squares input ``Y X^H / (L P)``.

    Equals ``H`` plus filtered noise when ``L >= K``; for ``L < K`` the
    pilot cross-correlation ``X X^H / (L P)`` stays in (contamination).
    """
    Y = np.asarray(Y)
    length = X.shape[1]
    if Y.shape[-1] != length:
        raise ShapeMismatch(f"received block has {Y.shape[-1]} symbols, pilots have {length}")
    return Y @ _herm(X) / (length * power)


@dataclass
class PilotBlock:
    X: np.ndarray
    Y: np.ndarray
    Y_ls: np.ndarray
    power: float
    noise_var: float


def pilot_block(H, length, power, noise_var, rng):
    """Pilots, received block and LS input for channel(s) ``H``."""
    X = make_dft_pilots(np.asarray(H).shape[-1], length, power)
    Y = receive_pilots(H, X, noise_var, rng)
    return PilotBlock(X=X, Y=Y, Y_ls=ls_preprocess(Y, X, power), power=power, noise_var=noise_var)


# --- linear MMSE estimation ------------------------------------------------------

@dataclass
class LmmseEstimator:
    """Affine estimator ``H_hat = Y R + B`` built from channel moments."""

    R: np.ndarray       # L x K
    B: np.ndarray       # N_t x K
    H_mean: np.ndarray  # N_t x K
    Q: np.ndarray       # K x K, second moment of the channel deviation
    X: np.ndarray
    noise_var: float

    def estimate(self, Y):
        return estimate(self, Y)

    def save(self, path):
        arrays = OrderedDict(R=self.R, B=self.B, H_mean=self.H_mean, Q=self.Q, X=self.X)
        save_arrays(path, arrays, {"kind": "lmmse", "noise_var": self.noise_var})

    @classmethod
    def load(cls, path):
        arrays, meta = load_arrays(path)
        return cls(noise_var=float(meta["noise_var"]), **arrays)


def lmmse_from_moments(H_mean, Q, X, noise_var):
    """Closed-form minimizer of the expected squared error.

    ``R = (X^H Q X + N_t s2 I_L)^{-1} X^H Q`` and ``B = -H_mean (X R - I)``.
    A ``1e-12`` relative ridge is added when the bracket is numerically
    singular (noiseless pilots with a rank-deficient ``Q``).
    """
    H_mean = np.asarray(H_mean, dtype=np.complex128)
    Q = np.asarray(Q, dtype=np.complex128)
    nt, K = H_mean.shape
    if Q.shape != (K, K) or X.shape[0] != K:
        raise ShapeMismatch(f"moments {H_mean.shape}/{Q.shape} do not match pilots {X.shape}")
    length = X.shape[1]
    M = _herm(X) @ Q @ X + nt * noise_var * np.eye(length)
    M = 0.5 * (M + _herm(M))
    scale = np.abs(M).max()
    if scale == 0 or np.linalg.cond(M) > 1.0 / RIDGE:
        M = M + RIDGE * max(scale, 1.0) * np.eye(length)
    R = np.linalg.solve(M, _herm(X) @ Q)
    B = -H_mean @ (X @ R - np.eye(K))
    return LmmseEstimator(R=R, B=B, H_mean=H_mean, Q=Q, X=X, noise_var=float(noise_var))


def channel_moments(H_train):
    """Sample mean and ``mean(dH^H dH)`` of a stack of channel matrices."""
    H_train = np.asarray(H_train, dtype=np.complex128)
    if H_train.ndim != 3 or H_train.shape[0] < 2:
        raise DegenerateTraining("need at least two training channel matrices")
    H_mean = H_train.mean(axis=0)
    dH = H_train - H_mean
    if not np.any(dH):
        raise DegenerateTraining("all training channels are identical")
    Q = np.mean(_herm(dH) @ dH, axis=0)
    return H_mean, 0.5 * (Q + _herm(Q))


def fit_lmmse(H_train, X, noise_var):
    """Fit the estimator to training uplink channels ``(T, N_t, K)``."""
    H_mean, Q = channel_moments(H_train)
    return lmmse_from_moments(H_mean, Q, X, noise_var)


def estimate(est, Y):
    return np.asarray(Y) @ est.R + est.B


def estimate_from_ls(est, Y_ls, power):
    """Same estimate computed from the LS input ``Y X^H / (L P)``.

    With ``R = (X^H Q X + c I)^{-1} X^H Q`` the push-through identity gives
    ``Y R = L P Y_ls (Q X X^H + c I)^{-1} Q``, so the raw block is not needed.
    """
    X = est.X
    K, length = X.shape
    nt = est.B.shape[0]
    M = est.Q @ X @ _herm(X) + nt * est.noise_var * np.eye(K)
    scale = np.abs(M).max()
    if scale == 0 or np.linalg.cond(M) > 1.0 / RIDGE:
        M = M + RIDGE * max(scale, 1.0) * np.eye(K)
    R_ls = length * power * np.linalg.solve(M, est.Q)
    return np.asarray(Y_ls) @ R_ls + est.B


def expected_mse(H_train, X, noise_var, R, B):
    """Training-set squared error of ``Y R + B`` averaged over the pilot noise:
    ``mean_t ||H_t (X R - I) + B||^2 + N_t s2 ||R||^2``."""
    H_train = np.asarray(H_train)
    K = X.shape[0]
    nt = H_train.shape[-2]
    resid = H_train @ (X @ R - np.eye(K)) + B
    return float(np.mean(np.sum(np.abs(resid) ** 2, axis=(-2, -1))) + nt * noise_var * np.sum(np.abs(R) ** 2))
