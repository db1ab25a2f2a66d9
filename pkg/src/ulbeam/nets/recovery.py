"""Differentiable beamforming recovery and rate functionals.

These mirror the numpy constructors in ``ulbeam.beamforming`` on batched
tensors: ``H`` is ``(B, N_t, K)``, powers are ``(B, K)``. There are no
trainable parameters here.
"""
from __future__ import annotations

import numpy as np

from .. import ad


def _eye(n):
    return np.eye(n)


def _col_scale(V, gram_diag, p):
    """Scale column k of ``V`` to norm ``sqrt(p_k)`` given its squared norm."""
    s = ad.sqrt(p) / ad.sqrt(gram_diag)
    return V * ad.reshape(s, (s.shape[0], 1, s.shape[1]))


def recover_full(H, p, q, N0):
    """Columns ``sqrt(p_k)`` times the unit direction of
    ``(I + sum_j (q_j/N0) h_j h_j^H)^{-1} h_k``."""
    B, nt, K = H.shape
    Hq = H * ad.reshape(q * (1.0 / N0), (B, 1, K))
    M = ad.matmul(Hq, ad.herm(H)) + _eye(nt)
    V = ad.matmul(ad.inv(M), H)
    return _col_scale(V, ad.sum(ad.abs2(V), axis=1), p)


def recover_reduced_coeffs(A, p, q, N0):
    """Coefficients ``C`` with ``W = H C`` from the Gram matrix ``A = H^H H``.

    Uses ``(I + H D H^H)^{-1} H = H (I + D A)^{-1}`` so only ``K x K``
    matrices are inverted; column norms come from ``c^H A c``.
    """
    B, K, _ = A.shape
    DA = A * ad.reshape(q * (1.0 / N0), (B, K, 1))
    X = ad.inv(DA + _eye(K))
    norms = ad.real(ad.sum(ad.conj(X) * ad.matmul(A, X), axis=1))
    return _col_scale(X, norms, p)


def recover_reduced(H, p, q, N0):
    A = ad.matmul(ad.herm(H), H)
    return ad.matmul(H, recover_reduced_coeffs(A, p, q, N0))


def zf_coeffs(A, P):
    """ZF as ``W = H C`` with ``C = d A^{-1}``; ``||W||^2 = d^2 tr(A^{-1})``."""
    Ai = ad.inv(A)
    tr = ad.real(ad.sum(ad.diagonal(Ai), axis=-1))
    d = ad.sqrt(P / tr)
    return Ai * ad.reshape(d, (d.shape[0], 1, 1))


def recover_zf(H, P):
    A = ad.matmul(ad.herm(H), H)
    return ad.matmul(H, zf_coeffs(A, P))


def recover_slnr(H, p, N0):
    """SLNR beams for the first ``K`` columns of ``H`` (own-cell users);
    ``H`` holds this BS's channels to all users, ``p`` is ``(B, K)``."""
    B, nt, U = H.shape
    K = p.shape[-1]
    HH = ad.matmul(H, ad.herm(H))                       # (B, N_t, N_t)
    scale = ad.reshape(p * (1.0 / N0), (B, K, 1, 1))
    M = ad.reshape(HH, (B, 1, nt, nt)) * scale + _eye(nt)
    own = ad.reshape(ad.transpose(ad.getitem(H, (slice(None), slice(None), slice(0, K)))), (B, K, nt, 1))
    V = ad.reshape(ad.matmul(ad.inv(M), own), (B, K, nt))
    V = ad.transpose(V)                                 # (B, N_t, K)
    return _col_scale(V, ad.sum(ad.abs2(V), axis=1), p)


def normalize_total(Wraw, P):
    """Scale each sample's beams to total power ``P``."""
    n2 = ad.sum(ad.abs2(Wraw), axis=(1, 2))
    return Wraw * ad.reshape(ad.sqrt(P / n2), (n2.shape[0], 1, 1))


# --- rates -------------------------------------------------------------------

def rate_from_cross(S, N0):
    """Per-sample sum rate from ``S[b, k, j] = h_k^H w_j``."""
    G = ad.abs2(S)
    sig = ad.diagonal(G)
    interf = ad.sum(G, axis=-1) - sig
    return ad.sum(ad.log2(sig / (interf + N0) + 1.0), axis=-1)


def sum_rate(H, W, N0):
    return rate_from_cross(ad.matmul(ad.herm(H), W), N0)


def slnr_rate(H, W, N0):
    """Per-sample sum of ``log2(1 + SLNR)`` over the ``K`` own users.

    Leakage of beam k is its received power at every other user in ``H``.
    """
    G = ad.abs2(ad.matmul(ad.herm(H), W))              # (B, U, K)
    K = W.shape[-1]
    sig = ad.diagonal(ad.getitem(G, (slice(None), slice(0, K), slice(None))))
    leak = ad.sum(G, axis=1) - sig
    return ad.sum(ad.log2(sig / (leak + N0) + 1.0), axis=-1)
