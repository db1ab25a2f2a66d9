"""Batched dense linear algebra kernels (numpy, no autodiff).

Everything here works on stacks of square matrices with shape ``(..., n, n)``.
"""
from __future__ import annotations

import numpy as np

from ..errors import SingularMatrix

PIVOT_RTOL = 1e-12


def lu_factor(a):
    """LU with partial pivoting over the trailing two axes.

    Returns ``(lu, perm)`` where ``lu`` packs the unit-lower and upper
    factors and ``perm[..., i]`` is the original row now at position ``i``.
    Raises SingularMatrix when a pivot falls below ``PIVOT_RTOL`` times the
    largest entry magnitude of its matrix.
    """
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"expected square matrices, got shape {a.shape}")
    n = a.shape[-1]
    batch = a.shape[:-2]
    lu = a.reshape((-1, n, n)).astype(np.result_type(a.dtype, np.float64), copy=True)
    m = lu.shape[0]
    perm = np.tile(np.arange(n), (m, 1))
    scale = np.abs(lu).reshape(m, -1).max(axis=1) if n else np.zeros(m)
    rows = np.arange(m)
    for j in range(n):
        piv = j + np.argmax(np.abs(lu[:, j:, j]), axis=1)
        pmag = np.abs(lu[rows, piv, j])
        bad = (pmag <= PIVOT_RTOL * scale) | (scale == 0)
        if np.any(bad):
            raise SingularMatrix(
                f"pivot {j} magnitude {pmag[bad].min():.3e} below tolerance "
                f"({int(bad.sum())} of {m} matrices)")
        swap = piv != j
        if np.any(swap):
            idx = rows[swap]
            tmp = lu[idx, j, :].copy()
            lu[idx, j, :] = lu[idx, piv[swap], :]
            lu[idx, piv[swap], :] = tmp
            ptmp = perm[idx, j].copy()
            perm[idx, j] = perm[idx, piv[swap]]
            perm[idx, piv[swap]] = ptmp
        lu[:, j + 1:, j] /= lu[:, j:j + 1, j]
        lu[:, j + 1:, j + 1:] -= lu[:, j + 1:, j:j + 1] * lu[:, j:j + 1, j + 1:]
    return lu.reshape(batch + (n, n)), perm.reshape(batch + (n,))


def lu_solve(lu, perm, b):
    """Solve ``A x = b`` given ``lu_factor(A)``; ``b`` has shape (..., n, r)."""
    n = lu.shape[-1]
    batch = lu.shape[:-2]
    lu2 = lu.reshape((-1, n, n))
    p2 = perm.reshape((-1, n))
    b2 = np.broadcast_to(b, batch + b.shape[-2:]).reshape((-1,) + b.shape[-2:])
    x = np.take_along_axis(b2, p2[:, :, None], axis=1).astype(
        np.result_type(lu.dtype, b.dtype), copy=True)
    for i in range(1, n):
        x[:, i, :] -= np.einsum("bj,bjr->br", lu2[:, i, :i], x[:, :i, :])
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            x[:, i, :] -= np.einsum("bj,bjr->br", lu2[:, i, i + 1:], x[:, i + 1:, :])
        x[:, i, :] /= lu2[:, i, i:i + 1]
    return x.reshape(batch + b.shape[-2:])


def inv(a):
    """Batched inverse via partial-pivot LU.

    Returns ``(inverse, cond)`` where ``cond`` is the 1-norm condition
    number of each matrix in the stack.
    """
    a = np.asarray(a)
    n = a.shape[-1]
    lu, perm = lu_factor(a)
    eye = np.broadcast_to(np.eye(n, dtype=a.dtype), a.shape)
    x = lu_solve(lu, perm, eye)
    cond = (np.abs(a).sum(axis=-2).max(axis=-1)
            * np.abs(x).sum(axis=-2).max(axis=-1))
    return x, cond


def hermitian_eig(a, tol=1e-14, max_sweeps=100):
    """Eigendecomposition of a Hermitian matrix by cyclic Jacobi rotations.

    Returns ascending eigenvalues ``w`` and unitary ``v`` with
    ``a = v @ diag(w) @ v^H``.
    """
    a = np.array(a, dtype=np.complex128)
    n = a.shape[0]
    v = np.eye(n, dtype=np.complex128)
    a = 0.5 * (a + a.conj().T)
    fro = np.linalg.norm(a)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off <= tol * max(fro, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                mag = abs(apq)
                if mag <= 1e-300:
                    continue
                # phase-rotate so the pivot is real, then a real Jacobi rotation
                ph = apq / mag
                app, aqq = a[p, p].real, a[q, q].real
                theta = 0.5 * np.arctan2(2 * mag, aqq - app)
                c, s = np.cos(theta), np.sin(theta)
                rot = np.eye(n, dtype=np.complex128)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s * ph
                rot[q, p] = -s * np.conj(ph)
                a = rot.conj().T @ a @ rot
                v = v @ rot
    else:
        raise ArithmeticError("Jacobi eigensolver did not converge")
    w = np.diag(a).real.copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]
