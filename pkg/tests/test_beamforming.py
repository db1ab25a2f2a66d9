import numpy as np
import pytest

from ulbeam import beamforming as bf
from ulbeam import solvers
from ulbeam.errors import RankDeficient, SingularMatrix


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def scalar_sinr(H, W, N0, k):
    # plain loops, no matrix products
    nt, K = H.shape
    def inner(a, b):
        return sum(np.conj(a[i]) * b[i] for i in range(nt))
    sig = abs(inner(H[:, k], W[:, k])) ** 2
    intf = sum(abs(inner(H[:, k], W[:, j])) ** 2 for j in range(K) if j != k)
    return sig / (intf + N0)


# --- sinr / sum rate -----------------------------------------------------------

def test_sinr_single_user():
    H = np.array([[1.0], [0.0]], dtype=complex)
    W = np.array([[2.0], [0.0]], dtype=complex)
    assert bf.sinr(H, W, 1.0, 0) == pytest.approx(4.0)


def test_sinr_orthogonal_users_see_no_interference():
    H = np.eye(2, dtype=complex)
    W = np.diag([3.0, 1.0]).astype(complex)
    s = bf.sinr_all(H, W, 0.5)
    np.testing.assert_allclose(s, [9.0 / 0.5, 1.0 / 0.5])


def test_sinr_matches_scalar_oracle():
    rng = np.random.default_rng(0)
    for _ in range(20):
        H, W = crandn(rng, 3, 3), crandn(rng, 3, 3)
        for k in range(3):
            assert abs(bf.sinr(H, W, 0.7, k) - scalar_sinr(H, W, 0.7, k)) < 1e-12


def test_sum_rate_values():
    H = np.array([[1.0], [0.0]], dtype=complex)
    W = np.array([[2.0], [0.0]], dtype=complex)
    assert bf.sum_rate(H, W, 1.0) == pytest.approx(np.log2(5.0), abs=1e-12)
    assert bf.sum_rate(crandn(np.random.default_rng(1), 3, 2), np.zeros((3, 2)), 1.0) == 0.0


def test_sum_rate_is_sum_of_user_rates():
    rng = np.random.default_rng(2)
    H, W = crandn(rng, 4, 3), crandn(rng, 4, 3)
    total = sum(np.log2(1 + bf.sinr(H, W, 0.3, k)) for k in range(3))
    assert bf.sum_rate(H, W, 0.3) == pytest.approx(total, abs=1e-12)


# --- optimal-structure reconstruction ---------------------------------------------

def test_reconstruct_single_user_is_matched_filter():
    rng = np.random.default_rng(3)
    h = crandn(rng, 4, 1)
    for weighting in ("per_user", "printed"):
        W = bf.reconstruct(h, [5.0], [5.0], 0.1, weighting=weighting)
        np.testing.assert_allclose(W, np.sqrt(5.0) * h / np.linalg.norm(h), atol=1e-12)


def test_reconstruct_zero_q_gives_matched_filters():
    rng = np.random.default_rng(4)
    H = crandn(rng, 3, 3)
    p = np.array([1.0, 2.0, 3.0])
    W = bf.reconstruct(H, p, np.zeros(3), 1.0)
    np.testing.assert_allclose(W, H / np.linalg.norm(H, axis=0) * np.sqrt(p), atol=1e-12)


@pytest.mark.parametrize("weighting", ["per_user", "printed"])
def test_reconstruct_power_and_scale_invariance(weighting):
    rng = np.random.default_rng(5)
    for _ in range(20):
        H = crandn(rng, 4, 3)
        p = rng.dirichlet(np.ones(3)) * 10
        q = rng.dirichlet(np.ones(3)) * 10
        W = bf.reconstruct(H, p, q, 0.5, weighting=weighting)
        np.testing.assert_allclose(np.linalg.norm(W, axis=0) ** 2, p, atol=1e-10)
        assert abs(bf.total_power(W) - 10) < 1e-8
        W2 = bf.reconstruct(H, p, 3.7 * q, 3.7 * 0.5, weighting=weighting)
        np.testing.assert_allclose(W2, W, atol=1e-10)


def test_reconstruct_batched_matches_loop():
    rng = np.random.default_rng(6)
    H = crandn(rng, 5, 3, 2)
    p = rng.dirichlet(np.ones(2), 5) * 4
    q = rng.dirichlet(np.ones(2), 5) * 4
    for weighting in ("per_user", "printed"):
        Wb = bf.reconstruct(H, p, q, 1.0, weighting=weighting)
        for t in range(5):
            np.testing.assert_allclose(Wb[t], bf.reconstruct(H[t], p[t], q[t], 1.0, weighting=weighting), atol=1e-12)


def test_reconstruct_rejects_unknown_weighting():
    with pytest.raises(ValueError):
        bf.reconstruct(np.eye(2), [1, 1], [1, 1], 1.0, weighting="other")


def test_round_trip_through_wmmse_powers():
    rng = np.random.default_rng(7)
    P, N0 = 100.0, 1.0
    good = 0
    for _ in range(20):
        H = crandn(rng, 4, 4)
        res = solvers.wmmse(H, P, N0)
        pair = solvers.extract_pq(H, res.W, N0, P)
        rate = bf.sum_rate(H, bf.reconstruct(H, pair.p, pair.q, N0), N0)
        good += rate >= 0.95 * res.rate
    assert good >= 19


def test_power_pair_validation():
    bf.PowerPair([1, 2], [2, 1], 3.0).validate()
    with pytest.raises(ValueError):
        bf.PowerPair([1, 2], [2, 2], 3.0).validate()
    with pytest.raises(ValueError):
        bf.PowerPair([-1, 4], [2, 1], 3.0).validate()
    with pytest.raises(ValueError):
        bf.PowerPair([1, 2], [1, 1, 1], 3.0)


# --- zero forcing / matched filter -------------------------------------------------

def test_zf_orthonormal_columns():
    rng = np.random.default_rng(8)
    Q, _ = np.linalg.qr(crandn(rng, 4, 4))
    H = Q[:, :2]
    W = bf.zf(H, 6.0)
    np.testing.assert_allclose(W, np.sqrt(3.0) * H, atol=1e-12)


def test_zf_nulls_cross_terms():
    rng = np.random.default_rng(9)
    for _ in range(50):
        H = crandn(rng, 6, 4)
        W = bf.zf(H, 10.0)
        assert abs(bf.total_power(W) - 10.0) < 1e-9
        S = np.abs(H.conj().T @ W)
        scale = np.outer(np.linalg.norm(H, axis=0), np.linalg.norm(W, axis=0))
        off = ~np.eye(4, dtype=bool)
        assert np.all(S[off] < 1e-9 * scale[off])
        d = np.diag(H.conj().T @ W)
        np.testing.assert_allclose(d, d[0], atol=1e-9)


def test_zf_single_user_is_matched_filter():
    rng = np.random.default_rng(10)
    h = crandn(rng, 5, 1)
    np.testing.assert_allclose(bf.zf(h, 2.0), bf.mrt(h, 2.0), atol=1e-12)


def test_zf_rank_deficient():
    H = np.ones((3, 2), dtype=complex)
    with pytest.raises(SingularMatrix):
        bf.zf(H, 1.0)
    with pytest.raises(RankDeficient):
        bf.zf(np.ones((2, 3), dtype=complex), 1.0)


# --- dimension reduction ------------------------------------------------------------

def test_reduction_orthonormal_columns():
    rng = np.random.default_rng(11)
    Q, _ = np.linalg.qr(crandn(rng, 6, 6))
    red = bf.reduce_dimension(Q[:, :3])
    np.testing.assert_allclose(red.eigvals, np.ones(3), atol=1e-12)
    np.testing.assert_allclose(red.G.conj().T @ red.G, np.eye(3), atol=1e-12)


def test_reduction_gram_and_rate_invariance():
    rng = np.random.default_rng(12)
    for _ in range(100):
        H = crandn(rng, 16, 4)
        red = bf.reduce_dimension(H)
        np.testing.assert_allclose(red.G.conj().T @ red.G, H.conj().T @ H, atol=1e-9)
        V = crandn(rng, 4, 4)
        full = bf.sum_rate(H, red.lift(V), 0.5)
        assert abs(full - bf.sum_rate_reduced(red.G, V, 0.5)) < 1e-9
        np.testing.assert_allclose(np.linalg.norm(red.lift(V), axis=0), np.linalg.norm(V, axis=0), atol=1e-9)


def test_reduced_reconstruction_matches_full():
    # optimal-structure beams live in the span of the channels, so building
    # them in the reduced space and lifting gives the full-space beams
    rng = np.random.default_rng(13)
    H = crandn(rng, 8, 3)
    p = np.array([1.0, 2.0, 3.0])
    q = np.array([2.0, 2.5, 1.5])
    red = bf.reduce_dimension(H)
    V = bf.reconstruct_reduced(red.G, p, q, 0.4)
    np.testing.assert_allclose(red.lift(V), bf.reconstruct(H, p, q, 0.4), atol=1e-10)


def test_reduction_rank_deficient():
    H = np.ones((4, 2), dtype=complex)
    with pytest.raises(RankDeficient):
        bf.reduce_dimension(H)


# --- multicell -----------------------------------------------------------------------

def scalar_slnr(H_local, w, k, N0):
    n_users = H_local.shape[1]
    g = [abs(np.vdot(H_local[:, u], w)) ** 2 for u in range(n_users)]
    return g[k] / (sum(g[u] for u in range(n_users) if u != k) + N0)


def test_slnr_single_user_equals_sinr():
    rng = np.random.default_rng(14)
    h, w = crandn(rng, 3, 1), crandn(rng, 3)
    assert bf.slnr(h, w, 0, 0.2) == pytest.approx(bf.sinr(h, w[:, None], 0.2, 0), rel=1e-12)


def test_slnr_orthogonal_leakage():
    H = np.eye(3, dtype=complex)
    w = np.array([2.0, 0, 0], dtype=complex)
    assert bf.slnr(H, w, 0, 0.5) == pytest.approx(4.0 / 0.5)
    assert bf.slnr_rate(H, w, 0, 0.5) == pytest.approx(np.log2(9.0))


def test_slnr_matches_scalar_oracle():
    rng = np.random.default_rng(15)
    for _ in range(20):
        H_local = crandn(rng, 3, 4)  # 2 cells x 2 users seen from one BS
        w = crandn(rng, 3)
        for k in range(4):
            assert abs(bf.slnr(H_local, w, k, 0.3) - scalar_slnr(H_local, w, k, 0.3)) < 1e-12


def test_slnr_beamformer_limits():
    rng = np.random.default_rng(16)
    H = crandn(rng, 4, 3)
    w = bf.slnr_beamformer(H, 0.0, 1, 1.0)
    np.testing.assert_allclose(w, 0.0 * H[:, 1], atol=1e-12)
    u = bf.slnr_direction(H, 0.0, 1, 1.0)
    np.testing.assert_allclose(u, H[:, 1] / np.linalg.norm(H[:, 1]), atol=1e-12)
    h = H[:, :1]
    np.testing.assert_allclose(bf.slnr_direction(h, 7.0, 0, 1.0), h[:, 0] / np.linalg.norm(h), atol=1e-12)
    assert np.linalg.norm(bf.slnr_beamformer(H, 2.5, 0, 1.0)) == pytest.approx(np.sqrt(2.5))


def test_slnr_direction_is_optimal():
    # the closed-form direction maximizes SLNR: compare to random directions
    rng = np.random.default_rng(17)
    H = crandn(rng, 3, 4)
    p, N0 = 2.0, 0.5
    w = bf.slnr_beamformer(H, p, 0, N0)
    best = bf.slnr(H, w, 0, N0)
    for _ in range(2000):
        v = crandn(rng, 3)
        v *= np.sqrt(p) / np.linalg.norm(v)
        assert bf.slnr(H, v, 0, N0) <= best * (1 + 1e-12)


def brute_multicell_sinr(H_all, W, N0):
    n_cells, nt, n_users = H_all.shape
    K = W.shape[-1]
    out = []
    for u in range(n_users):
        cell, k = divmod(u, K)
        sig = abs(np.vdot(H_all[cell][:, u], W[cell][:, k])) ** 2
        intf = 0.0
        for j in range(n_cells):
            for b in range(K):
                if (j, b) != (cell, k):
                    intf += abs(np.vdot(H_all[j][:, u], W[j][:, b])) ** 2
        out.append(sig / (intf + N0))
    return np.array(out)


def test_multicell_sinr_brute_force():
    rng = np.random.default_rng(18)
    for _ in range(10):
        H_all = crandn(rng, 2, 3, 4)
        W = crandn(rng, 2, 3, 2)
        np.testing.assert_allclose(bf.multicell_sinr(H_all, W, 0.1), brute_multicell_sinr(H_all, W, 0.1), rtol=1e-12)


def test_multicell_single_cell_reduces_to_sinr():
    rng = np.random.default_rng(19)
    H, W = crandn(rng, 3, 2), crandn(rng, 3, 2)
    np.testing.assert_allclose(bf.multicell_sinr(H[None], W[None], 0.2), bf.sinr_all(H, W, 0.2), rtol=1e-12)


def test_multicell_without_cross_links_is_per_cell():
    rng = np.random.default_rng(20)
    H_all = crandn(rng, 2, 3, 4)
    H_all[0][:, 2:] = 0
    H_all[1][:, :2] = 0
    W = crandn(rng, 2, 3, 2)
    per_cell = bf.sum_rate(H_all[0][:, :2], W[0], 0.1) + bf.sum_rate(H_all[1][:, 2:], W[1], 0.1)
    assert bf.multicell_sum_rate(H_all, W, 0.1) == pytest.approx(per_cell, abs=1e-12)
    assert bf.cell_sum_rate(H_all, W, 0.1, 1) == pytest.approx(bf.sum_rate(H_all[1][:, 2:], W[1], 0.1), abs=1e-12)
