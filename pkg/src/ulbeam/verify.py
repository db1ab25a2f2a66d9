"""Quick invariant battery behind ``ulbeam verify``.

Each check is a small, seeded instance of a property the package relies on
and runs in about a second. The full-size versions live in the test suite.
"""
from __future__ import annotations

import time

import numpy as np

from . import ad
from . import beamforming as bf
from . import channels as ch
from . import pilots, solvers
from .ad.gradcheck import check_grad
from .nets import BeamModel, LossWeights, NetSpec, TrainData, hybrid_loss, recovery


def _crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def check_gradients():
    rng = np.random.default_rng(0)
    spec = NetSpec(n_t=2, k=2, csi_width=4, csi_layers=1, power_width=4, power_layers=1)
    m = BeamModel(spec, 10.0, 1.0)
    X, H = _crandn(rng, 2, 2, 2), _crandn(rng, 2, 2, 2)
    pq = rng.random((2, 2)) + 0.1
    pq = 10.0 * pq / pq.sum(axis=1, keepdims=True)
    batch = TrainData(X=X, H=H, p=pq, q=pq[:, ::-1])

    def fn():
        fwd = m.forward(X, train=True, rng=np.random.default_rng(0))
        return hybrid_loss(m, fwd, batch, LossWeights(1.0, 1.0, 0.3))[0]

    err = check_grad(fn, [t for _, t in m.params])
    return err < 1e-4, f"hybrid loss rel. error {err:.1e}"


def check_wmmse():
    rng = np.random.default_rng(1)
    worst_drop, worst_power = 0.0, 0.0
    for _ in range(10):
        H = _crandn(rng, 4, 4)
        res = solvers.wmmse(H, 100.0, 1.0)
        worst_drop = max(worst_drop, -np.min(np.diff(res.trace), initial=0.0))
        worst_power = max(worst_power, abs(bf.total_power(res.W) - 100.0) / 100.0)
    return worst_drop <= 1e-9 and worst_power <= 1e-6, f"max drop {worst_drop:.1e}, power error {worst_power:.1e}"


def check_round_trip():
    rng = np.random.default_rng(2)
    ratios = []
    for _ in range(20):
        H = _crandn(rng, 4, 4)
        res = solvers.wmmse(H, 100.0, 1.0)
        pair = solvers.extract_pq(H, res.W, 1.0, 100.0)
        W = bf.reconstruct(H, pair.p, pair.q, 1.0)
        ratios.append(bf.sum_rate(H, W, 1.0) / res.rate)
    good = int(np.sum(np.array(ratios) >= 0.95))
    return good >= 19, f"{good}/20 instances at >= 95% of the WMMSE rate"


def check_reduction():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        H, V = _crandn(rng, 16, 4), _crandn(rng, 4, 4)
        red = bf.reduce_dimension(H)
        worst = max(worst, abs(bf.sum_rate_reduced(red.G, V, 1.0) - bf.sum_rate(H, red.lift(V), 1.0)))
    return worst < 1e-9, f"max rate difference {worst:.1e}"


def check_zf():
    rng = np.random.default_rng(4)
    H = _crandn(rng, 6, 4)
    S = H.conj().T @ bf.zf(H, 5.0)
    off = np.abs(S - np.diag(np.diag(S))).max() / np.abs(S).max()
    h = _crandn(rng, 6, 1)
    mf = np.abs(bf.zf(h, 5.0) - h / np.linalg.norm(h) * np.sqrt(5.0)).max()
    return off < 1e-9 and mf < 1e-12, f"cross terms {off:.1e}, single-user deviation {mf:.1e}"


def check_lmmse():
    rng = np.random.default_rng(5)
    H = _crandn(rng, 400, 4, 3)
    X = pilots.make_dft_pilots(3, 3, 1.0)
    est = pilots.fit_lmmse(H, X, 0.0)
    nmse = ch.nmse(est.estimate(H[:50] @ X), H[:50])
    est = pilots.fit_lmmse(H, X, 0.5)
    base = pilots.expected_mse(H, X, 0.5, est.R, est.B)
    beaten = sum(pilots.expected_mse(H, X, 0.5, est.R + 1e-3 * _crandn(rng, *est.R.shape), est.B) > base
                 for _ in range(20))
    return nmse < 1e-10 and beaten == 20, f"noiseless NMSE {nmse:.1e}, {beaten}/20 perturbations worse"


def check_gp():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(10):
        a, b = rng.uniform(0.1, 2.0, 3), rng.uniform(0.0, 1.0, 3)
        p1 = solvers.gp_power(a, b, 1.0)
        p2 = solvers.gp_power(a, b, 1.0, solvers.GpConfig(method="kkt"))
        f1, f2 = solvers.gp_objective(a, b, p1), solvers.gp_objective(a, b, p2)
        worst = max(worst, abs(f1 - f2) / max(1.0, abs(f2)))
    return worst < 1e-9, f"log-domain vs stationarity objective gap {worst:.1e}"


def check_power_net():
    rng = np.random.default_rng(7)
    m = BeamModel(NetSpec(n_t=3, k=3, seed=1), 7.0, 1.0)
    fwd = m.forward(_crandn(rng, 5, 3, 3))
    dev = max(np.abs(fwd.p.data.sum(axis=1) - 7.0).max(), np.abs(fwd.q.data.sum(axis=1) - 7.0).max())
    return dev < 1e-10 and fwd.p.data.min() > 0, f"budget deviation {dev:.1e}"


def check_recovery_twins():
    rng = np.random.default_rng(8)
    H = _crandn(rng, 20, 4, 3)
    p = rng.random((20, 3)) + 0.1
    q = rng.random((20, 3)) + 0.1
    ref = bf.reconstruct(H, p, q, 0.5)
    got = recovery.recover_full(ad.constant(H), ad.constant(p), ad.constant(q), 0.5).data
    dev = np.abs(got - ref).max()
    return dev < 1e-10, f"max deviation {dev:.1e}"


def check_locality():
    cfg = ch.ScenarioConfig(kind="multicell", n_t=2, k=1, n_cells=3, seed=3)
    H = ch.build_dataset(cfg, 1).arrays["h_down"][0]
    rng = np.random.default_rng(9)
    base = solvers.multicell_ao(H[0], [0], cfg.power, cfg.noise).W
    H2 = H.copy()
    H2[1:] = _crandn(rng, *H2[1:].shape) * np.abs(H).mean()
    again = solvers.multicell_ao(H2[0], [0], cfg.power, cfg.noise).W
    same = base.tobytes() == again.tobytes()
    return same, "cell 0 beams byte-identical" if same else "cell 0 beams changed"


CHECKS = (
    ("gradients", check_gradients),
    ("wmmse_contract", check_wmmse),
    ("pq_round_trip", check_round_trip),
    ("dimension_reduction", check_reduction),
    ("zero_forcing", check_zf),
    ("lmmse_oracle", check_lmmse),
    ("gp_routes_agree", check_gp),
    ("power_net_budget", check_power_net),
    ("recovery_twins", check_recovery_twins),
    ("multicell_locality", check_locality),
)


def run_all(out=print):
    """Run every check; print one line each and return True if all pass."""
    ok_all = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, reported as such
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        ok_all &= bool(ok)
        out(f"{'PASS' if ok else 'FAIL'} {name}: {detail} ({time.perf_counter() - t0:.1f}s)")
    return ok_all
