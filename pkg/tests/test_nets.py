import numpy as np
import pytest

from ulbeam import ad
from ulbeam import beamforming as bf
from ulbeam import channels as ch
from ulbeam import solvers
from ulbeam.ad.gradcheck import check_grad
from ulbeam.errors import ConfigError, MissingLabels
from ulbeam.nets import (BeamModel, LossWeights, NetSpec, Normalizer, TrainConfig, TrainData,
                         hybrid_loss, train)
from ulbeam.nets import baselines, recovery
from ulbeam.nets.training import predict


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def rand_powers(rng, B, K, P):
    x = rng.random((B, K)) + 0.05
    return P * x / x.sum(axis=1, keepdims=True)


# --- recovery twins ------------------------------------------------------------

def test_recovery_full_and_reduced_match_numpy():
    rng = np.random.default_rng(0)
    H = crandn(rng, 100, 4, 3)
    p, q = rand_powers(rng, 100, 3, 10.0), rand_powers(rng, 100, 3, 10.0)
    ref = bf.reconstruct(H, p, q, 0.7)
    full = recovery.recover_full(ad.constant(H), ad.constant(p), ad.constant(q), 0.7).data
    red = recovery.recover_reduced(ad.constant(H), ad.constant(p), ad.constant(q), 0.7).data
    assert np.abs(full - ref).max() < 1e-10
    assert np.abs(red - ref).max() < 1e-10


def test_recovery_zf_matches_numpy_and_is_diagonal():
    rng = np.random.default_rng(1)
    H = crandn(rng, 100, 5, 3)
    W = recovery.recover_zf(ad.constant(H), 4.0).data
    assert np.abs(W - bf.zf(H, 4.0)).max() < 1e-10
    S = np.swapaxes(H.conj(), 1, 2) @ W
    off = S - np.einsum("bkk->bk", S)[:, :, None] * np.eye(3)
    assert np.abs(off).max() < 1e-10 * np.abs(S).max()


def test_recovery_slnr_matches_numpy():
    rng = np.random.default_rng(2)
    H = crandn(rng, 100, 3, 6)
    p = rand_powers(rng, 100, 2, 5.0)
    W = recovery.recover_slnr(ad.constant(H), ad.constant(p), 0.3).data
    ref = np.stack([bf.slnr_beams(H[b], p[b], [0, 1], 0.3) for b in range(100)])
    assert np.abs(W - ref).max() < 1e-10
    r = recovery.slnr_rate(ad.constant(H), ad.constant(W), 0.3).data
    r_ref = [sum(bf.slnr_rate(H[b], W[b][:, k], k, 0.3) for k in range(2)) for b in range(100)]
    assert np.abs(r - r_ref).max() < 1e-10


def test_rate_matches_numpy():
    rng = np.random.default_rng(3)
    H, W = crandn(rng, 100, 4, 3), crandn(rng, 100, 4, 3)
    r = recovery.sum_rate(ad.constant(H), ad.constant(W), 0.5).data
    assert np.abs(r - bf.sum_rate(H, W, 0.5)).max() < 1e-10


def test_single_user_rate_gradient_in_power():
    rng = np.random.default_rng(4)
    h = crandn(rng, 1, 3, 1)
    N0 = 0.4
    p = ad.tensor(np.array([[2.0]]), requires_grad=True)
    q = ad.constant(np.array([[2.0]]))
    W = recovery.recover_full(ad.constant(h), p, q, N0)
    rate = ad.sum(recovery.sum_rate(ad.constant(h), W, N0))
    ad.backward(rate)
    g = np.sum(np.abs(h) ** 2) / N0
    expect = g / ((1 + 2.0 * g) * np.log(2))
    assert abs(p.grad.real.item() - expect) < 1e-10


def test_single_user_zf_is_matched_filter():
    rng = np.random.default_rng(5)
    h = crandn(rng, 1, 4, 1)
    W = recovery.recover_zf(ad.constant(h), 3.0).data
    mf = h / np.linalg.norm(h) * np.sqrt(3.0)
    assert np.abs(W - mf).max() < 1e-12


# --- model construction ----------------------------------------------------------

def small_model(**kw):
    spec = NetSpec(variant="small_fc", n_t=kw.pop("n_t", 2), k=kw.pop("k", 2), **kw)
    return BeamModel(spec, 10.0, 1.0)


def test_power_net_sums_to_budget():
    rng = np.random.default_rng(6)
    for seed in range(5):
        m = small_model(seed=seed, n_t=4, k=3)
        fwd = m.forward(crandn(rng, 7, 4, 3), train=False)
        for v in (fwd.p.data, fwd.q.data):
            assert np.all(v > 0)
            assert np.abs(v.sum(axis=1) - 10.0).max() < 1e-10


def test_uniform_logits_give_equal_powers():
    m = small_model(k=3, n_t=3)
    m.params["pow.p.W"].data[:] = 0
    m.params["pow.q.W"].data[:] = 0
    fwd = m.forward(crandn(np.random.default_rng(0), 4, 3, 3))
    np.testing.assert_allclose(fwd.p.data, 10.0 / 3, rtol=1e-14)
    np.testing.assert_allclose(fwd.q.data, 10.0 / 3, rtol=1e-14)


def test_zero_output_layer_gives_energy_loss():
    rng = np.random.default_rng(7)
    m = small_model(role="csi")
    m.params["csi.out.W"].data[:] = 0
    X, H = crandn(rng, 6, 2, 2), crandn(rng, 6, 2, 2)
    fwd = m.forward(X)
    assert np.all(fwd.H.data == 0)
    loss, parts = hybrid_loss(m, fwd, TrainData(X=X, H=H), LossWeights(alpha_p=0, alpha_r=0))
    # 1/(2 T N_t K) sum |H|^2
    assert abs(parts["L_H"] - np.sum(np.abs(H) ** 2) / (2 * 6 * 2 * 2)) < 1e-14


def test_perfect_predictions_give_zero_loss():
    rng = np.random.default_rng(8)
    m = small_model()
    X = crandn(rng, 5, 2, 2)
    fwd = m.forward(X)
    batch = TrainData(X=X, H=fwd.H.data.copy(), p=fwd.p.data.copy(), q=fwd.q.data.copy())
    loss, _ = hybrid_loss(m, fwd, batch, LossWeights(alpha_r=0))
    assert float(loss.data) == 0.0


def test_per_user_mode_equals_single_user_passes():
    rng = np.random.default_rng(9)
    m = small_model(role="csi", per_user=True, n_t=3, k=3)
    X = crandn(rng, 4, 3, 3)
    full = m.forward(X).H.data
    # a one-user model carrying the same weights
    single = small_model(role="csi", n_t=3, k=1)
    single.restore({f"param/{n}": t.data for n, t in m.params})
    for u in range(3):
        np.testing.assert_allclose(full[:, :, u:u + 1], single.forward(X[:, :, u:u + 1]).H.data, atol=1e-13)


def test_spec_validation():
    with pytest.raises(ConfigError):
        NetSpec(variant="small_fc", recovery="slnr")
    with pytest.raises(ConfigError):
        NetSpec(variant="multicell_fc", n_cells=2, recovery="full")
    with pytest.raises(ConfigError):
        LossWeights(0, 0, 0)


# --- loss gradient -------------------------------------------------------------------

@pytest.mark.parametrize("recover", ["full", "reduced", "zf"])
def test_hybrid_loss_gradient_matches_finite_differences(recover):
    rng = np.random.default_rng(10)
    spec = NetSpec(variant="small_fc", n_t=2, k=2, csi_width=4, csi_layers=1, power_width=4,
                   power_layers=1, rate_recovery=recover)
    m = BeamModel(spec, 10.0, 1.0)
    X, H = crandn(rng, 2, 2, 2), crandn(rng, 2, 2, 2)
    p, q = rand_powers(rng, 2, 2, 10.0), rand_powers(rng, 2, 2, 10.0)
    batch = TrainData(X=X, H=H, p=p, q=q)
    weights = LossWeights(1.0, 1.0, 0.3)

    def fn():
        fwd = m.forward(X, train=True, rng=np.random.default_rng(0))
        return hybrid_loss(m, fwd, batch, weights)[0]

    leaves = [t for _, t in m.params]
    for t in leaves:
        t.grad = None
    assert check_grad(fn, leaves) < 1e-4


def test_missing_labels():
    rng = np.random.default_rng(11)
    m = small_model()
    X = crandn(rng, 3, 2, 2)
    with pytest.raises(MissingLabels):
        hybrid_loss(m, m.forward(X), TrainData(X=X), LossWeights())
    with pytest.raises(MissingLabels):
        hybrid_loss(m, m.forward(X), TrainData(X=X, H=X), LossWeights(alpha_p=1.0))


# --- training behaviour -------------------------------------------------------------

def labeled(kind, n, count, split="train", seed=1, **kw):
    cfg = ch.ScenarioConfig(kind=kind, n_t=n, k=n, seed=seed, **kw)
    ds = ch.build_dataset(cfg, count, solvers.wmmse_labeler(cfg.power, cfg.noise), split=split)
    a = ds.arrays
    return cfg, TrainData(X=a["h_up"], H=a["h_down"], p=a["label_p"], q=a["label_q"])


def test_loss_decreases_on_fixed_batch():
    cfg, T = labeled("small_tdd", 2, 20)
    m = BeamModel(NetSpec(n_t=2, k=2), cfg.power, cfg.noise, Normalizer.fit(T.X, T.H))
    losses = []
    from ulbeam.ad.optim import OptimConfig, step
    opt = OptimConfig(lr=1e-3)
    for _ in range(11):
        fwd = m.forward(T.X, train=True, rng=np.random.default_rng(0))
        loss, _ = hybrid_loss(m, fwd, T, LossWeights())
        losses.append(float(loss.data))
        m.params.zero_grad()
        ad.backward(loss)
        step(m.params, opt)
    assert losses[-1] < losses[0]
    assert sum(b < a for a, b in zip(losses, losses[1:])) >= 8


def test_training_is_deterministic(tmp_path):
    cfg, T = labeled("small_tdd", 2, 60)
    _, V = labeled("small_tdd", 2, 20, split="val")
    runs = []
    for i in range(2):
        m = BeamModel(NetSpec(n_t=2, k=2, seed=3), cfg.power, cfg.noise, Normalizer.fit(T.X, T.H))
        res = train(m, T, V, LossWeights(), TrainConfig(epochs=3, batch_size=16, seed=4), tmp_path / f"log{i}.csv")
        runs.append((m.snapshot(), [(r["L_H"], r["L_P"], r["val_rate"]) for r in res.log]))
    assert runs[0][1] == runs[1][1]
    for k, v in runs[0][0].items():
        assert np.array_equal(v, runs[1][0][k])
    rows = (tmp_path / "log0.csv").read_text().splitlines()
    assert rows[0] == "epoch,L_H,L_P,val_rate,val_NMSE,wall_time" and len(rows) == 4


def test_unsupervised_training_runs_without_labels():
    rng = np.random.default_rng(12)
    X = crandn(rng, 40, 2, 2)
    m = small_model()
    res = train(m, TrainData(X=X), None, LossWeights(alpha_h=0, alpha_p=0, alpha_r=1.0), TrainConfig(epochs=2))
    assert len(res.log) == 2
    assert np.isnan(res.log[0]["L_H"]) or res.log[0]["L_H"] == 0.0


def test_toy_square_channel_is_learnable():
    cfg = ch.ScenarioConfig(kind="toy_square", n_t=2, k=2, seed=1)
    tr, va = ch.build_dataset(cfg, 2000), ch.build_dataset(cfg, 300, split="val")
    T = TrainData(X=tr.arrays["h_up"], H=tr.arrays["h_down"])
    V = TrainData(X=va.arrays["h_up"], H=va.arrays["h_down"])
    m = BeamModel(NetSpec(n_t=2, k=2, role="csi", per_user=True), cfg.power, cfg.noise, Normalizer.fit(T.X, T.H))
    res = train(m, T, V, LossWeights(alpha_p=0, alpha_r=0), TrainConfig(epochs=100, batch_size=20, lr=3e-3))
    assert min(r["val_NMSE"] for r in res.log) < 0.05


def test_power_net_learns_labels():
    cfg, T = labeled("small_tdd", 2, 2000)
    _, V = labeled("small_tdd", 2, 300, split="val")
    m = BeamModel(NetSpec(n_t=2, k=2), cfg.power, cfg.noise, Normalizer.fit(T.X, T.H))

    def val_lp():
        fwd = m.forward(V.X)
        return hybrid_loss(m, fwd, V, LossWeights(alpha_h=0, alpha_p=1, alpha_r=0))[1]["L_P"]

    before = val_lp()
    train(m, T, V, LossWeights(alpha_h=1.0, alpha_p=1.0, alpha_r=0.0), TrainConfig(epochs=50))
    after = val_lp()
    assert after * 10 <= before, f"validation L_P fell only {before / after:.1f}x ({before:.4f} -> {after:.4f})"


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    m = small_model(seed=2)
    X = crandn(rng, 5, 2, 2)
    path = tmp_path / "m.ckpt"
    m.save(path)
    m2, _ = BeamModel.load(path)
    a, b = predict(m, X), predict(m2, X)
    assert np.array_equal(a["W"], b["W"]) and np.array_equal(a["p"], b["p"])


# --- baselines --------------------------------------------------------------------

def test_wmmse_scheme_equals_solver():
    cfg = ch.ScenarioConfig(kind="small_tdd", n_t=3, k=3, seed=2)
    ds = ch.build_dataset(cfg, 5, split="test")
    score = baselines.evaluate(["wmmse"], ds, {})["wmmse"]
    ref = [solvers.wmmse(h, cfg.power, cfg.noise).rate for h in ds.arrays["h_down"]]
    np.testing.assert_allclose(score.rates, ref, rtol=1e-12)


class PerfectCsi:
    """Stand-in CSI-Net returning the true downlink channel."""

    def __init__(self, truth):
        self.truth = truth


def test_learned_zf_with_perfect_channel_is_true_zf(monkeypatch):
    cfg = ch.ScenarioConfig(kind="small_tdd", n_t=4, k=3, seed=3)
    ds = ch.build_dataset(cfg, 6, split="test")
    monkeypatch.setattr(baselines, "_learned_channel", lambda model, X, cfg: model.truth)
    score = baselines.evaluate(["learned_ch_zf"], ds, {"csi": PerfectCsi(ds.arrays["h_down"])})["learned_ch_zf"]
    H = ds.arrays["h_down"]
    np.testing.assert_allclose(score.rates, bf.sum_rate(H, bf.zf(H, cfg.power), cfg.noise), rtol=1e-12)
    assert score.nmse == 0.0


def test_cell_views_put_own_users_first():
    arr = np.arange(2 * 3 * 1 * 6).reshape(2, 3, 1, 6)
    v = baselines.cell_views(arr, 2)
    assert v.shape == (6, 1, 6)
    np.testing.assert_array_equal(v[1, 0], arr[0, 1, 0, [2, 3, 0, 1, 4, 5]])
    with pytest.raises(ConfigError):
        baselines.check_schemes(["learned_ch_zf"], multicell=True)
