"""Beamformer constructions and rate functionals (plain numpy).

Conventions: a channel matrix ``H`` has shape ``(..., N_t, K)`` with column
``k`` the downlink channel of user ``k``; beamformers ``W`` have the same
layout. Leading axes are batch axes and broadcast.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ad.linalg import hermitian_eig
from .errors import RankDeficient

RANK_RTOL = 1e-10
POWER_TOL = 1e-8


@dataclass
class PowerPair:
    """Downlink powers ``p`` and virtual-uplink powers ``q``, each summing to ``budget``."""

    p: np.ndarray
    q: np.ndarray
    budget: float

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.p.shape != self.q.shape:
            raise ValueError(f"p and q shapes differ: {self.p.shape} vs {self.q.shape}")

    def validate(self, tol=POWER_TOL):
        if np.any(self.p < 0) or np.any(self.q < 0):
            raise ValueError("powers must be nonnegative")
        for name, v in (("p", self.p), ("q", self.q)):
            if np.any(np.abs(v.sum(axis=-1) - self.budget) > tol * max(1.0, self.budget)):
                raise ValueError(f"sum of {name} differs from budget {self.budget}")
        return self


def _gram_cross(H, W):
    """``S[..., k, j] = h_k^H w_j``."""
    return np.swapaxes(H.conj(), -1, -2) @ W


def sinr_all(H, W, N0):
    s = np.abs(_gram_cross(H, W)) ** 2
    sig = np.diagonal(s, axis1=-2, axis2=-1)
    return sig / (s.sum(axis=-1) - sig + N0)


def sinr(H, W, N0, k):
    """SINR of user ``k``: desired power over other-beam interference plus noise."""
    return sinr_all(H, W, N0)[..., k]


def rates(H, W, N0):
    return np.log2(1.0 + sinr_all(H, W, N0))


def sum_rate(H, W, N0):
    return rates(H, W, N0).sum(axis=-1)


def total_power(W):
    return np.sum(np.abs(W) ** 2, axis=(-2, -1))


def _normalize_columns(V, p):
    n = np.linalg.norm(V, axis=-2, keepdims=True)
    return V / n * np.sqrt(np.asarray(p))[..., None, :]


def reconstruct(H, p, q, N0, weighting="per_user"):
    """Beamformers from the optimal-structure parameterization.

    Column ``k`` is ``sqrt(p_k)`` times the unit vector along
    ``(I + sum_j c_kj h_j h_j^H)^{-1} h_k``. With ``weighting="per_user"``
    the weight on user ``j``'s outer product is ``q_j / N0`` (one matrix shared
    by every column); ``weighting="printed"`` uses ``q_k / N0`` for every term
    of column ``k``.
    """
    H = np.asarray(H)
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    nt = H.shape[-2]
    eye = np.eye(nt)
    if weighting == "per_user":
        M = eye + (H * (q / N0)[..., None, :]) @ np.swapaxes(H.conj(), -1, -2)
        V = np.linalg.solve(M, H)
    elif weighting == "printed":
        HH = H @ np.swapaxes(H.conj(), -1, -2)
        M = eye + (q / N0)[..., :, None, None] * HH[..., None, :, :]
        V = np.linalg.solve(M, np.swapaxes(H, -1, -2)[..., :, :, None])[..., 0]
        V = np.swapaxes(V, -1, -2)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    return _normalize_columns(V, p)


def _check_rank(s):
    smax = s.max(axis=-1, keepdims=True)
    if np.any(s <= RANK_RTOL * smax) or np.any(smax == 0):
        raise RankDeficient("channel matrix is rank deficient")


def zf(H, P):
    """Zero-forcing beamformer ``d H (H^H H)^{-1}`` scaled to total power ``P``."""
    H = np.asarray(H)
    if H.shape[-1] > H.shape[-2]:
        raise RankDeficient("zero forcing needs K <= N_t")
    _check_rank(np.linalg.svd(H, compute_uv=False))
    G = np.swapaxes(H.conj(), -1, -2) @ H
    W = H @ np.linalg.inv(G)
    d = np.sqrt(P / total_power(W))
    return W * d[..., None, None]


def mrt(H, P):
    """Matched filter with equal per-user power."""
    H = np.asarray(H)
    K = H.shape[-1]
    return _normalize_columns(H, np.full(H.shape[:-2] + (K,), P / K))


@dataclass
class ReducedChannel:
    """``K x K`` equivalent channel of a full-column-rank ``N_t x K`` channel."""

    G: np.ndarray        # columns g_k
    lift_map: np.ndarray  # H U Lambda^{-1/2}, N_t x K
    U: np.ndarray
    eigvals: np.ndarray

    def lift(self, V):
        """Map reduced beams ``V`` (K x K) back to antenna space."""
        return self.lift_map @ V


def reduce_dimension(H):
    """Eigen-based reduction ``G = Lambda^{1/2} U^H`` with ``H^H H = U Lambda U^H``.

    Inner products are preserved: ``h_k^H lift(v) = g_k^H v`` and
    ``||lift(v)|| = ||v||``.
    """
    H = np.asarray(H, dtype=np.complex128)
    nt, K = H.shape
    if K > nt:
        raise RankDeficient("dimension reduction needs K <= N_t")
    lam, U = hermitian_eig(H.conj().T @ H)
    if lam.max() <= 0 or np.any(lam <= RANK_RTOL * lam.max()):
        raise RankDeficient("channel Gram matrix is rank deficient")
    root = np.sqrt(lam)
    G = root[:, None] * U.conj().T
    lift_map = H @ U / root[None, :]
    return ReducedChannel(G=G, lift_map=lift_map, U=U, eigvals=lam)


def sum_rate_reduced(G, V, N0):
    return sum_rate(G, V, N0)


def reconstruct_reduced(G, p, q, N0, weighting="per_user"):
    """Optimal-structure beams in the reduced ``K``-dimensional space."""
    return reconstruct(G, p, q, N0, weighting=weighting)


# --- multicell ------------------------------------------------------------
#
# H_all has shape (N_c, N_t, N_users): H_all[j][:, u] is the downlink channel
# from BS j to user u. Users are ordered cell-major: user u belongs to cell
# u // K. Beams W have shape (N_c, N_t, K).

def slnr(H_local, w, k, N0):
    """Signal-to-leakage-plus-noise ratio of user ``k`` with beam ``w``.

    ``H_local`` holds this BS's channels to every user in the system.
    """
    g = np.abs(np.asarray(H_local).conj().T @ np.asarray(w)) ** 2
    return g[k] / (g.sum() - g[k] + N0)


def slnr_rate(H_local, w, k, N0):
    return np.log2(1.0 + slnr(H_local, w, k, N0))


def slnr_direction(H_local, p, k, N0):
    """Unit-norm SLNR-optimal direction for user ``k`` at power ``p``."""
    H_local = np.asarray(H_local)
    nt = H_local.shape[0]
    M = np.eye(nt) + (p / N0) * (H_local @ H_local.conj().T)
    v = np.linalg.solve(M, H_local[:, k])
    return v / np.linalg.norm(v)


def slnr_beamformer(H_local, p, k, N0):
    """``sqrt(p)`` times the SLNR-optimal direction; uses only this BS's CSI."""
    return np.sqrt(p) * slnr_direction(H_local, p, k, N0)


def slnr_beams(H_local, powers, user_index, N0):
    """Beams for a cell's users; ``user_index[k]`` is user k's global index."""
    H_local = np.asarray(H_local)
    cols = [slnr_beamformer(H_local, p, u, N0) for p, u in zip(powers, user_index)]
    return np.stack(cols, axis=-1)


def multicell_sinr(H_all, W, N0):
    """Actual SINR of every user, shape (N_c * K,), with intra- and inter-cell interference."""
    H_all = np.asarray(H_all)
    W = np.asarray(W)
    n_cells, _, n_users = H_all.shape
    K = W.shape[-1]
    # rx[j, u, b] = |h_{u,j}^H w_{b,j}|^2 : power at user u from beam b of BS j
    rx = np.abs(np.einsum("jnu,jnb->jub", H_all.conj(), W)) ** 2
    total = rx.sum(axis=(0, 2))
    users = np.arange(n_users)
    sig = rx[users // K, users, users % K]
    if sig.shape[0] != n_users or n_cells * K != n_users:
        raise ValueError("beam layout does not match user count")
    return sig / (total - sig + N0)


def multicell_sum_rate(H_all, W, N0):
    return np.log2(1.0 + multicell_sinr(H_all, W, N0)).sum()


def cell_sum_rate(H_all, W, N0, cell):
    K = np.asarray(W).shape[-1]
    r = np.log2(1.0 + multicell_sinr(H_all, W, N0))
    return r[cell * K:(cell + 1) * K].sum()
