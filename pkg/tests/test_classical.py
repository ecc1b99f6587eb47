import numpy as np
import pytest

from attcmi import classical as cl
from attcmi import forward_model as fm
from attcmi.tensor import ShapeError


def gaussian_h(m, n, seed):
    rng = np.random.default_rng(seed)
    return (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) / np.sqrt(2)


class TestMatchedFilter:
    def test_identity(self):
        res = cl.matched_filter(np.eye(2, dtype=complex), np.array([1 + 0j, 0j]))
        np.testing.assert_array_equal(res.rho_rec, [1.0, 0.0])

    def test_zero_measurement(self):
        res = cl.matched_filter(gaussian_h(4, 3, 0), np.zeros(4, dtype=complex))
        assert not res.rho_rec.any()

    def test_matches_conjugate_transpose_oracle(self):
        rng = np.random.default_rng(1)
        h = gaussian_h(8, 4, 1)
        g = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        expected = np.zeros(4)
        for j in range(4):
            acc = 0j
            for i in range(8):
                acc += np.conj(h[i, j]) * g[i]
            expected[j] = abs(acc)
        np.testing.assert_allclose(cl.matched_filter(h, g).rho_rec, expected, atol=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            cl.matched_filter(gaussian_h(4, 3, 0), np.zeros(5, dtype=complex))


class TestSolveLs:
    def test_square_noiseless_recovery(self):
        rng = np.random.default_rng(2)
        h = gaussian_h(6, 6, 2) + 2 * np.eye(6)  # well conditioned
        rho = rng.uniform(0, 1, 6)
        g = h @ rho
        res = cl.solve_ls(h, g, cl.SolverConfig(max_iters=100, rel_tol=1e-14))
        nmse = np.sum((res.rho_rec - rho) ** 2) / np.sum(rho ** 2)
        assert nmse < 1e-8

    def test_overdetermined_matches_direct_solve(self):
        rng = np.random.default_rng(3)
        h = gaussian_h(64, 16, 3)
        g = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        res = cl.solve_ls(h, g, cl.SolverConfig(max_iters=200, rel_tol=1e-13))
        direct = np.linalg.solve(h.conj().T @ h, h.conj().T @ g)
        np.testing.assert_allclose(res.rho_rec, np.abs(direct), atol=1e-6)

    def test_tikhonov_on_rank_deficient(self):
        rng = np.random.default_rng(4)
        base = gaussian_h(8, 3, 4)
        h = np.hstack([base, base])  # rank 3, 6 columns
        g = rng.standard_normal(8) + 1j * rng.standard_normal(8)
        res = cl.solve_ls(h, g, cl.SolverConfig(max_iters=200, rel_tol=1e-12,
                                                tikhonov_alpha=0.5))
        assert np.all(np.isfinite(res.rho_rec))
        direct = np.linalg.solve(h.conj().T @ h + 0.5 * np.eye(6), h.conj().T @ g)
        np.testing.assert_allclose(res.rho_rec, np.abs(direct), atol=1e-8)

    def test_residual_history_non_increasing(self):
        rng = np.random.default_rng(5)
        h = gaussian_h(32, 16, 5)
        g = rng.standard_normal(32) + 1j * rng.standard_normal(32)
        res = cl.solve_ls(h, g, cl.SolverConfig(max_iters=60, rel_tol=1e-12))
        hist = res.residual_history
        assert all(b <= a * (1 + 1e-12) for a, b in zip(hist, hist[1:]))

    def test_converges_within_n_iterations_with_slack(self):
        rng = np.random.default_rng(6)
        h = gaussian_h(12, 6, 6)
        rho = rng.uniform(0, 1, 6)
        res = cl.solve_ls(h, h @ rho, cl.SolverConfig(max_iters=60, rel_tol=1e-10))
        assert res.iterations_used <= 60  # N=6, 10x float slack
        assert res.residual_norm < 1e-8

    def test_matched_filter_agreement_orthonormal_rows(self):
        # H with orthonormal rows: argmax pixel of mf and ls estimates agree
        rng = np.random.default_rng(7)
        a = rng.standard_normal((4, 8)) + 1j * rng.standard_normal((4, 8))
        q = np.linalg.qr(a.conj().T)[0].conj().T  # 4x8, Q Q^H = I
        rho = rng.uniform(0, 1, 8)
        g = q @ rho
        mf = cl.matched_filter(q, g).rho_rec
        ls = cl.solve_ls(q, g, cl.SolverConfig(max_iters=50, rel_tol=1e-12)).rho_rec
        assert np.argmax(mf) == np.argmax(ls)

    def test_zero_rhs(self):
        res = cl.solve_ls(gaussian_h(4, 3, 8), np.zeros(4, dtype=complex))
        assert not res.rho_rec.any()
        assert res.iterations_used == 0


class TestTiming:
    def test_monotone_in_iterations(self):
        rng = np.random.default_rng(9)
        h = gaussian_h(128, 64, 9)
        samples = [rng.standard_normal(128) + 1j * rng.standard_normal(128)
                   for _ in range(12)]
        cheap = lambda hh, g: cl.solve_ls(hh, g, cl.SolverConfig(max_iters=1, rel_tol=1e-30))
        costly = lambda hh, g: cl.solve_ls(hh, g, cl.SolverConfig(max_iters=50, rel_tol=1e-30))
        t_cheap, _ = cl.time_reconstruction(cheap, h, samples)
        t_costly, _ = cl.time_reconstruction(costly, h, samples)
        assert 0 <= t_cheap < t_costly

    def test_cost_scales_with_problem_size(self):
        rng = np.random.default_rng(10)
        run = lambda hh, g: cl.solve_ls(hh, g, cl.SolverConfig(max_iters=20, rel_tol=1e-30))
        times = {}
        for n in (64, 128):
            h = gaussian_h(4 * n, n, n)
            samples = [rng.standard_normal(4 * n) + 1j * rng.standard_normal(4 * n)
                       for _ in range(10)]
            times[n], _ = cl.time_reconstruction(run, h, samples)
        # doubling N quadruples the per-iteration matvec cost, machine noise allowed
        assert times[128] > times[64] * 4 / 3

    def test_requires_ten_samples(self):
        with pytest.raises(ValueError):
            cl.time_reconstruction(lambda h, g: None, np.eye(2, dtype=complex),
                                   [np.zeros(2)] * 5)
