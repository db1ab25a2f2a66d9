"""Classical optimizers: WMMSE, virtual-uplink power extraction, SLNR
alternating optimization with geometric-programming power allocation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import beamforming as bf
from .errors import NoConvergence, NonMonotone


@dataclass
class WmmseConfig:
    max_iter: int = 200
    tol: float = 1e-6
    bisection_tol: float = 1e-10

    def __post_init__(self):
        if self.max_iter < 1 or self.tol <= 0 or self.bisection_tol <= 0:
            raise ValueError("WMMSE iterations and tolerances must be positive")


@dataclass
class WmmseResult:
    W: np.ndarray
    trace: list = field(default_factory=list)

    @property
    def rate(self):
        return self.trace[-1]

    @property
    def iterations(self):
        return len(self.trace) - 1


def _secular_root(d, c2, P, hi, tol):
    """Root in ``mu > -min(d)`` (and ``mu >= 0``) of ``sum c2/(d+mu)^2 = P``.

    Newton on ``1/sqrt(power(mu))``, which is close to linear in ``mu``,
    safeguarded by a bracket; falls back to bisection when a step leaves it.
    """
    def power(mu):
        return float(np.sum(c2 / (d + mu) ** 2))

    lo = 0.0
    while power(hi) > P:
        lo, hi = hi, 2.0 * hi
    mu = hi
    target = 1.0 / np.sqrt(P)
    for _ in range(200):
        den = d + mu
        pw = float(np.sum(c2 / den ** 2))
        if pw > P:
            lo = mu
        else:
            hi = mu
        if abs(pw - P) <= 1e-13 * P or hi - lo <= tol * max(hi, 1e-300):
            break
        dpw = -2.0 * float(np.sum(c2 / den ** 3))
        g = 1.0 / np.sqrt(pw) - target
        dg = -0.5 * pw ** -1.5 * dpw
        nxt = mu - g / dg if dg > 0 else 0.5 * (lo + hi)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        mu = nxt
    return mu


def _transmit_update(H, lam, u, P, cfg):
    """Beams minimizing weighted MSE under the total power constraint."""
    weights = lam * np.abs(u) ** 2
    A = (H * weights) @ H.conj().T
    A = 0.5 * (A + A.conj().T)
    B = H * (lam * u)
    d, V = np.linalg.eigh(A)
    C = V.conj().T @ B
    c2 = np.sum(np.abs(C) ** 2, axis=1)
    dmax = max(d.max(), 0.0)

    def power(mu):
        return float(np.sum(c2 / (d + mu) ** 2))

    if d.min() > 1e-12 * max(dmax, 1e-300) and power(0.0) <= P:
        mu = 0.0
    else:
        mu = _secular_root(d, c2, P, max(dmax, 1.0), cfg.bisection_tol)
    W = V @ (C / (d + mu)[:, None])
    pw = bf.total_power(W)
    if pw > 0:
        W = W * np.sqrt(P / pw)
    return W


def wmmse(H, P, N0, config=None):
    """Weighted-MMSE sum-rate maximization for a single-cell MISO downlink.

    Starts from matched-filter beams with equal power and alternates MMSE
    receivers, MSE weights and the power-constrained transmit update. Each
    iterate is scaled to use the full budget ``P`` (this never lowers the
    rate, so the trace stays monotone). Returns a WmmseResult whose ``trace``
    holds the sum rate of every iterate, starting with the initial point.
    """
    cfg = config or WmmseConfig()
    H = np.asarray(H, dtype=np.complex128)
    W = bf.mrt(H, P)
    rate = float(bf.sum_rate(H, W, N0))
    trace = [rate]
    for _ in range(cfg.max_iter):
        S = H.conj().T @ W
        diag = np.diagonal(S)
        tot = np.sum(np.abs(S) ** 2, axis=1) + N0
        u = diag / tot
        e = 1.0 - np.real(np.conj(u) * diag)
        lam = 1.0 / np.maximum(e, 1e-300)
        W = _transmit_update(H, lam, u, P, cfg)
        new = float(bf.sum_rate(H, W, N0))
        if new < rate - 1e-9 * max(1.0, abs(rate)):
            raise NonMonotone(f"WMMSE rate decreased from {rate} to {new}")
        trace.append(new)
        done = abs(new - rate) < cfg.tol
        rate = new
        if done:
            break
    return WmmseResult(W=W, trace=trace)


def _secular_root_batch(d, c2, P, tol):
    """Vectorized ``_secular_root`` over a batch: ``d, c2`` are ``(B, n)``."""
    def power(mu):
        return np.sum(c2 / (d + mu[:, None]) ** 2, axis=1)

    hi = np.maximum(d.max(axis=1), 1.0)
    lo = np.zeros_like(hi)
    grow = power(hi) > P
    while np.any(grow):
        lo = np.where(grow, hi, lo)
        hi = np.where(grow, 2.0 * hi, hi)
        grow = power(hi) > P
    mu = hi.copy()
    target = 1.0 / np.sqrt(P)
    active = np.ones(mu.shape, dtype=bool)
    for _ in range(200):
        den = d + mu[:, None]
        pw = np.sum(c2 / den ** 2, axis=1)
        lo = np.where(active & (pw > P), mu, lo)
        hi = np.where(active & (pw <= P), mu, hi)
        active &= ~((np.abs(pw - P) <= 1e-13 * P) | (hi - lo <= tol * np.maximum(hi, 1e-300)))
        if not active.any():
            break
        dpw = -2.0 * np.sum(c2 / den ** 3, axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            dg = -0.5 * pw ** -1.5 * dpw
            nxt = mu - (1.0 / np.sqrt(pw) - target) / dg
        bad = ~(dg > 0) | ~((lo < nxt) & (nxt < hi))
        nxt = np.where(bad, 0.5 * (lo + hi), nxt)
        mu = np.where(active, nxt, mu)
    return mu


def wmmse_batch(H, P, N0, config=None):
    """``wmmse`` over a batch ``H`` of shape ``(B, N_t, K)``.

    Runs the same iteration on every instance; each one freezes once its own
    stopping rule fires. Returns the beams ``(B, N_t, K)`` and the final
    rates. Raises NonMonotone naming the first offending instance.
    """
    cfg = config or WmmseConfig()
    H = np.asarray(H, dtype=np.complex128)
    nb, nt, K = H.shape
    Hh = np.conj(np.swapaxes(H, 1, 2))
    W = np.stack([bf.mrt(h, P) for h in H]) if nb else np.zeros_like(H)
    rate = bf.sum_rate(H, W, N0)
    active = np.ones(nb, dtype=bool)
    for _ in range(cfg.max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        Ha, Hha, Wa = H[idx], Hh[idx], W[idx]
        S = Hha @ Wa
        diag = np.diagonal(S, axis1=1, axis2=2)
        tot = np.sum(np.abs(S) ** 2, axis=2) + N0
        u = diag / tot
        lam = 1.0 / np.maximum(1.0 - np.real(np.conj(u) * diag), 1e-300)
        A = (Ha * (lam * np.abs(u) ** 2)[:, None, :]) @ Hha
        A = 0.5 * (A + np.conj(np.swapaxes(A, 1, 2)))
        Bm = Ha * (lam * u)[:, None, :]
        d, V = np.linalg.eigh(A)
        C = np.conj(np.swapaxes(V, 1, 2)) @ Bm
        c2 = np.sum(np.abs(C) ** 2, axis=2)
        dmax = np.maximum(d.max(axis=1), 0.0)
        with np.errstate(divide="ignore"):
            p0 = np.sum(c2 / d ** 2, axis=1)
        free = (d.min(axis=1) > 1e-12 * np.maximum(dmax, 1e-300)) & (p0 <= P)
        mu = np.zeros(len(idx))
        if not free.all():
            mu[~free] = _secular_root_batch(d[~free], c2[~free], P, cfg.bisection_tol)
        Wn = V @ (C / (d + mu[:, None])[:, :, None])
        pw = np.sum(np.abs(Wn) ** 2, axis=(1, 2))
        scale = np.where(pw > 0, np.sqrt(P / np.where(pw > 0, pw, 1.0)), 1.0)
        Wn = Wn * scale[:, None, None]
        new = bf.sum_rate(Ha, Wn, N0)
        old = rate[idx]
        drop = new < old - 1e-9 * np.maximum(1.0, np.abs(old))
        if drop.any():
            j = idx[np.argmax(drop)]
            err = NonMonotone(f"WMMSE rate decreased on instance {j}")
            err.index = int(j)
            raise err
        W[idx] = Wn
        rate[idx] = new
        active[idx] = np.abs(new - old) >= cfg.tol
    return W, rate


def virtual_uplink_powers(H, gamma, N0, tol=1e-8, max_iter=10_000):
    """Minimal uplink powers reaching SINR targets ``gamma`` with MMSE receivers.

    Solves the fixed point ``q_k = gamma_k / (h_k^H (N0 I + sum_{j!=k} q_j
    h_j h_j^H)^{-1} h_k)``. Each sweep fixes the MMSE receivers at the
    current ``q`` and solves the linear SINR-balance equations for ``q``
    exactly; the sweep has the same fixed point as the plain interference
    iteration but converges in a handful of steps even near interference
    limited operating points. Returns the unscaled ``q``.
    """
    H = np.asarray(H, dtype=np.complex128)
    gamma = np.asarray(gamma, dtype=np.float64)
    nt, K = H.shape
    q = np.full(K, 1.0)
    for _ in range(max_iter):
        M = N0 * np.eye(nt) + (H * q) @ H.conj().T
        U = np.linalg.solve(M, H)
        G = np.abs(U.conj().T @ H) ** 2
        g_own = np.diag(G).copy()
        A = np.diag(g_own) - gamma[:, None] * (G - np.diag(g_own))
        rhs = gamma * N0 * np.sum(np.abs(U) ** 2, axis=0)
        q_new = np.linalg.solve(A, rhs)
        if np.any(q_new < -1e-9 * max(np.abs(q_new).max(), 1e-300)):
            # receivers too far from the fixed point for the targets to be
            # reachable with them; take a plain interference-function step
            hmh = np.real(np.sum(H.conj() * U, axis=0))
            # h^H M_{-k}^{-1} h = hmh / (1 - q_k hmh) by Sherman-Morrison
            q_new = gamma * (1.0 - q * hmh) / hmh
        q_new = np.maximum(q_new, 0.0)
        # entries that are numerically zero are measured against the largest one
        floor = 1e-6 * max(q_new.max(), 1e-300)
        change = np.max(np.abs(q_new - q) / np.maximum(q_new, floor))
        q = q_new
        if change < tol:
            return q
    raise NoConvergence(f"virtual uplink fixed point not reached in {max_iter} sweeps")


def uplink_mmse_sinr(H, q, N0):
    """Uplink SINR of each user with MMSE receivers at powers ``q``."""
    H = np.asarray(H, dtype=np.complex128)
    nt, K = H.shape
    out = np.empty(K)
    for k in range(K):
        others = np.delete(np.arange(K), k)
        M = N0 * np.eye(nt) + (H[:, others] * q[others]) @ H[:, others].conj().T
        out[k] = q[k] * np.real(H[:, k].conj() @ np.linalg.solve(M, H[:, k]))
    return out


def extract_pq(H, W, N0, P):
    """Downlink/virtual-uplink power pair describing beams ``W``.

    ``p`` are the beam powers renormalized to sum ``P``; ``q`` is the
    virtual-uplink fixed point at the downlink SINRs of ``W``, scaled to sum
    ``P``.
    """
    H = np.asarray(H, dtype=np.complex128)
    p = np.sum(np.abs(W) ** 2, axis=0)
    p = p * (P / p.sum())
    gamma = bf.sinr_all(H, W, N0)
    q = virtual_uplink_powers(H, gamma, N0)
    q = q * (P / q.sum())
    return bf.PowerPair(p=p, q=q, budget=P)


def wmmse_labeler(P, N0, config=None):
    """Callback suitable for dataset labeling: H_D -> (p, q)."""
    cfg = config or WmmseConfig()

    def label(H):
        res = wmmse(H, P, N0, cfg)
        pair = extract_pq(H, res.W, N0, P)
        return {"p": pair.p, "q": pair.q, "wmmse_rate": np.array(res.rate)}

    def batch(Hs):
        W, rates = wmmse_batch(Hs, P, N0, cfg)
        ps, qs = [], []
        for j, (h, w) in enumerate(zip(Hs, W)):
            try:
                pair = extract_pq(h, w, N0, P)
            except Exception as exc:
                exc.index = j
                raise
            ps.append(pair.p)
            qs.append(pair.q)
        return {"p": np.array(ps), "q": np.array(qs), "wmmse_rate": rates}

    label.batch = batch
    return label


# --- geometric programming power allocation --------------------------------

@dataclass
class GpConfig:
    method: str = "logdomain"
    max_iter: int = 5000
    grad_tol: float = 1e-9
    armijo: float = 1e-4
    shrink: float = 0.5
    retain_one: bool = False

    def __post_init__(self):
        if self.method not in ("logdomain", "kkt"):
            raise ValueError(f"unknown GP method {self.method!r}")
        if self.max_iter < 1 or self.grad_tol <= 0 or not 0 < self.shrink < 1 or self.armijo <= 0:
            raise ValueError("GP settings must be positive")


def gp_objective(a, b, p, retain_one=False):
    """``sum log(a/p + b)`` (log of the posynomial product) or, with
    ``retain_one``, ``-sum log(1 + 1/(a/p + b))``."""
    a, b, p = (np.asarray(x, dtype=np.float64) for x in (a, b, p))
    if retain_one:
        # 1 / (a/p + b) written so that p = 0 is allowed
        return float(-np.sum(np.log1p(p / (a + b * p))))
    return float(np.sum(np.log(a / p + b)))


def _gp_logdomain(a, b, P, cfg):
    """Scaled projected descent in ``y = log p`` on the budget surface.

    The objective is separable in ``y`` so its Hessian is diagonal. Each step
    is the gradient scaled by that diagonal plus the constraint curvature
    (weighted by the current multiplier estimate, which keeps the scaling
    positive where the objective is flat), projected onto the tangent of
    the budget surface, then pulled back onto it by a shift of ``y``.
    """
    K = a.size
    logP = np.log(P)
    y = np.full(K, logP - np.log(K))

    def f_grad_hess(y):
        e = a * np.exp(-y)
        s = e + b
        return np.sum(np.log(s)), -e / s, e * b / (s * s)

    def retract(y):
        m = y.max()
        return y - (m + np.log(np.sum(np.exp(y - m))) - logP)

    f, g, h = f_grad_hess(y)
    stalled = 0
    for it in range(cfg.max_iter):
        pi = np.exp(y - logP)
        nu = (g @ pi) / (pi @ pi)
        gt = g - nu * pi
        gnorm = np.linalg.norm(gt)
        if gnorm < cfg.grad_tol * max(1.0, np.linalg.norm(g)):
            return np.exp(y), it, gnorm
        curv = np.maximum(h, 0.0) + abs(nu) * pi + 1e-12
        lam = (pi @ (g / curv)) / (pi @ (pi / curv))
        d = -(g - lam * pi) / curv
        slope = g @ d
        if slope >= 0:
            d, slope = -gt, -gnorm ** 2
        step = 1.0
        while True:
            y_new = retract(y + step * d)
            f_new, g_new, h_new = f_grad_hess(y_new)
            if f_new <= f + cfg.armijo * step * slope:
                break
            step *= cfg.shrink
            if step < 1e-20:
                return np.exp(y), it, gnorm
        # a long run of rounding-level progress means the gradient test is
        # below what the arithmetic can resolve
        stalled = stalled + 1 if f - f_new <= 1e-15 * max(1.0, abs(f)) else 0
        y, f, g, h = y_new, f_new, g_new, h_new
        if stalled >= 20:
            return np.exp(y), it, gnorm
    raise NoConvergence(f"GP did not converge in {cfg.max_iter} iterations (grad {gnorm:.2e})")


def _gp_kkt(a, b, P, cfg):
    """Exact solution via the optimality conditions.

    Both objectives are separable and convex in ``p`` (``a/p + b`` is convex
    and ``log(1 + p / (a + b p))`` is concave), so the optimum is
    characterized by a common multiplier ``nu``: each ``p_k(nu)`` minimizes
    its own term plus ``nu p_k``, is nonincreasing in ``nu``, and bisection
    on ``nu`` meets ``sum p = P``.
    """
    if cfg.retain_one:
        def p_of(nu):
            # a / ((a + b p)(a + (b + 1) p)) = nu, or p = 0 once nu >= 1/a
            qa = b * (b + 1.0)
            qb = a * (2.0 * b + 1.0)
            c = np.maximum(a / nu - a * a, 0.0)
            return 2.0 * c / (qb + np.sqrt(qb * qb + 4.0 * qa * c))
    else:
        def p_of(nu):
            # b p^2 + a p - a/nu = 0
            return 2.0 * a / nu / (a + np.sqrt(a * a + 4.0 * b * a / nu))

    hi = 1.0
    while p_of(hi).sum() > P:
        hi *= 2.0
    lo = hi / 2.0
    while p_of(lo).sum() < P:
        lo /= 2.0
    for it in range(2000):
        mid = np.sqrt(lo * hi)
        if p_of(mid).sum() > P:
            lo = mid
        else:
            hi = mid
        if hi / lo - 1.0 < 1e-15:
            break
    p = p_of(lo)
    return p * (P / p.sum()), it, 0.0


def gp_power(a, b, P, config=None):
    """Minimize ``prod_k (a_k / p_k + b_k)`` subject to ``sum p <= P``.

    The constraint is always active. The default route optimizes in the log
    domain ``y = log p`` on the active constraint surface with backtracking
    descent steps; ``method="kkt"`` solves the stationarity conditions
    directly. With ``retain_one`` the objective keeps the +1 of the rate,
    ``-sum log(1 + 1/(a_k/p_k + b_k))``; its optimum may switch users off,
    so it always goes through the stationarity route.
    """
    cfg = config or GpConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(a <= 0) or np.any(b < 0):
        raise ValueError("GP coefficients need a > 0 and b >= 0")
    if a.size == 1:
        return np.array([float(P)])
    if cfg.method == "kkt" or cfg.retain_one:
        p, _, _ = _gp_kkt(a, b, P, cfg)
    else:
        p, _, _ = _gp_logdomain(a, b, P, cfg)
    return p


def gp_projected_gradient(a, b, p, P):
    """Norm of the log-domain gradient of the posynomial objective,
    projected on the active constraint."""
    a, b, p = (np.asarray(x, dtype=np.float64) for x in (a, b, p))
    e = a / p
    g = -e / (e + b)
    pi = p / P
    return float(np.linalg.norm(g - (g @ pi) / (pi @ pi) * pi))


# --- multicell alternating optimization --------------------------------------

@dataclass
class AoConfig:
    max_iter: int = 100
    tol: float = 1e-8
    gp: GpConfig = field(default_factory=GpConfig)


@dataclass
class AoResult:
    W: np.ndarray        # N_t x K beams of this cell
    p: np.ndarray
    trace: list          # log of the posynomial objective per iteration


def slnr_coefficients(H_local, U, user_index, N0):
    """Posynomial coefficients ``a_k = N0/|h_k^H u_k|^2`` and
    ``b_k = leakage_k / |h_k^H u_k|^2`` for unit directions ``U``."""
    g = np.abs(H_local.conj().T @ U) ** 2  # (n_users, K)
    own = g[user_index, np.arange(len(user_index))]
    leak = g.sum(axis=0) - own
    return N0 / own, leak / own


def multicell_ao(H_local, user_index, P, N0, config=None):
    """Per-cell SLNR power/direction optimization using only local CSI.

    ``H_local`` (N_t x N_users) holds this BS's downlink channels to every
    user; ``user_index`` lists the global indices of the cell's own users.
    Alternates SLNR-optimal directions at fixed powers with geometric
    programming over powers at fixed directions.
    """
    cfg = config or AoConfig()
    H_local = np.asarray(H_local, dtype=np.complex128)
    user_index = np.asarray(user_index)
    K = user_index.size
    p = np.full(K, P / K)
    trace = []
    prev = np.inf
    for _ in range(cfg.max_iter):
        U = np.stack([bf.slnr_direction(H_local, p[k], user_index[k], N0) for k in range(K)], axis=1)
        a, b = slnr_coefficients(H_local, U, user_index, N0)
        p = gp_power(a, b, P, cfg.gp)
        obj = gp_objective(a, b, p, cfg.gp.retain_one)
        if obj > prev + 1e-9 * max(1.0, abs(prev)):
            raise NonMonotone(f"AO objective increased from {prev} to {obj}")
        trace.append(obj)
        if abs(prev - obj) < cfg.tol * max(1.0, abs(obj)):
            break
        prev = obj
    else:
        if cfg.max_iter > 1 and len(trace) >= 2 and abs(trace[-2] - trace[-1]) > 1e-4 * max(1.0, abs(trace[-1])):
            raise NoConvergence("alternating optimization did not settle")
    W = U * np.sqrt(p)[None, :]
    return AoResult(W=W, p=p, trace=trace)


def multicell_labeler(n_cells, K, P, N0, config=None):
    """Callback for multicell datasets: H_D (N_c, N_t, N_c*K) -> per-cell powers."""

    def label(H_all):
        ps = []
        for i in range(n_cells):
            res = multicell_ao(H_all[i], np.arange(i * K, (i + 1) * K), P, N0, config)
            ps.append(res.p)
        return {"p": np.stack(ps)}
    return label


def write_trace_csv(path, trace, name="objective"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", name])
        for i, v in enumerate(trace):
            w.writerow([i, repr(float(v))])
