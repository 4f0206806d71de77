import numpy as np
import pytest

from kryging.gengk import gengk_factorize, solve
from kryging.grid import GridSpec, MaternSpec
from kryging.mapping import SparseMap, build_map
from kryging.toeplitz import BttbOperator

from oracles import dense_corr, dense_solution


def identity_operator(grid):
    col = np.zeros(grid.n)
    col[0] = 1.0
    return BttbOperator(grid, col)


def random_problem(rng, n1, n2, p, rho=0.3, nu=0.5):
    g = GridSpec(n1, n2)
    S = dense_corr(g, rho, nu)
    op = BttbOperator.from_matern(g, MaternSpec(1.0, rho, nu))
    locs = np.column_stack([rng.uniform(0, 1, p), rng.uniform(0, 1, p)])
    amap = build_map(locs, g)
    b = rng.standard_normal(p)
    return g, S, op, amap, b


class TestFactorize:
    def test_identity_operators_break_down_after_one_step(self, rng):
        g = GridSpec(3, 3)
        op = identity_operator(g)
        amap = SparseMap.identity(g.n)
        b = rng.standard_normal(g.n)
        f = gengk_factorize(amap, op, b, tau2=1.0, k=1)
        assert f.beta1 == pytest.approx(np.linalg.norm(b))
        np.testing.assert_allclose(f.U[:, 0], b / np.linalg.norm(b))
        assert f.B[0, 0] == pytest.approx(1.0)
        np.testing.assert_allclose(f.V[:, 0], f.U[:, 0], atol=1e-14)
        assert f.B[1, 0] == 0.0
        assert f.breakdown_at == 1

    @pytest.mark.parametrize("reorth,tol", [(False, 1e-6), (True, 1e-8)])
    def test_exact_arithmetic_relations(self, rng, reorth, tol):
        g, S, op, amap, b = random_problem(rng, 5, 5, 20)
        tau2 = 0.25
        f = gengk_factorize(amap, op, b, tau2, k=10, reorthogonalize=reorth)
        Ad = amap.toarray()
        assert np.abs(Ad @ S @ f.Vk - f.U @ f.B).max() < tol
        assert np.abs(f.U.T @ f.U - tau2 * np.eye(f.k + 1)).max() < tol
        assert np.abs(f.Vk.T @ S @ f.Vk - np.eye(f.k)).max() < tol

    def test_rhs_scaling_homogeneity(self, rng):
        g, S, op, amap, b = random_problem(rng, 4, 4, 12)
        f1 = gengk_factorize(amap, op, b, 0.5, k=5)
        f2 = gengk_factorize(amap, op, 3.0 * b, 0.5, k=5)
        assert f2.beta1 == pytest.approx(3.0 * f1.beta1, rel=1e-13)
        np.testing.assert_allclose(f2.U, f1.U, atol=1e-12)
        np.testing.assert_allclose(f2.V, f1.V, atol=1e-12)
        np.testing.assert_allclose(f2.B, f1.B, atol=1e-12)

    def test_deterministic(self, rng):
        g, S, op, amap, b = random_problem(rng, 4, 5, 15)
        f1 = gengk_factorize(amap, op, b, 0.3, k=6)
        f2 = gengk_factorize(amap, op, b, 0.3, k=6)
        np.testing.assert_array_equal(f1.U, f2.U)
        np.testing.assert_array_equal(f1.V, f2.V)
        np.testing.assert_array_equal(f1.B, f2.B)

    def test_rejects_bad_inputs(self, rng):
        g = GridSpec(3, 3)
        op = identity_operator(g)
        amap = SparseMap.identity(g.n)
        with pytest.raises(ValueError):
            gengk_factorize(amap, op, np.zeros(g.n), 1.0, 3)
        with pytest.raises(ValueError):
            gengk_factorize(amap, op, np.ones(g.n), 0.0, 3)
        with pytest.raises(ValueError):
            gengk_factorize(amap, op, np.ones(g.n), 1.0, 0)


class TestSolve:
    def test_identity_ridge_closed_form(self, rng):
        # A = I, Sigma = I, tau2 = 1: x = b * sigma2 / (sigma2 + 1)
        g = GridSpec(3, 3)
        op = identity_operator(g)
        amap = SparseMap.identity(g.n)
        b = rng.standard_normal(g.n)
        f = gengk_factorize(amap, op, b, 1.0, k=4)
        sol = solve(f, 2.0, op, amap, b)
        np.testing.assert_allclose(sol.x_star, b * 2.0 / 3.0, rtol=1e-12)
        np.testing.assert_allclose(sol.psi_star, b / 3.0, rtol=1e-12)

    def test_full_order_matches_dense_solution_colocated(self, rng):
        g = GridSpec(6, 6)
        spec = MaternSpec(1.0, 0.3, 0.5)
        S = dense_corr(g, spec.rho, spec.nu)
        op = BttbOperator.from_matern(g, spec)
        amap = SparseMap.identity(g.n)
        b = rng.standard_normal(g.n)
        sigma2, tau2 = 1.0, 0.25
        f = gengk_factorize(amap, op, b, tau2, k=g.n, reorthogonalize=True)
        sol = solve(f, sigma2, op, amap, b)
        ref = dense_solution(S, np.eye(g.n), b, sigma2, tau2)
        assert np.linalg.norm(sol.x_star - ref) / np.linalg.norm(ref) < 1e-6

    def test_quad_matches_dense_quadratic_form_at_full_order(self, rng):
        g, S, op, amap, b = random_problem(rng, 5, 5, 20)
        sigma2, tau2 = 1.3, 0.4
        f = gengk_factorize(amap, op, b, tau2, k=g.n, reorthogonalize=True)
        sol = solve(f, sigma2, op, amap, b)
        ref = dense_solution(S, amap.toarray(), b, sigma2, tau2)
        quad_ref = ref @ np.linalg.solve(S, ref)
        assert sol.quad == pytest.approx(quad_ref, rel=1e-6)

    def test_data_fit_non_increasing_in_k(self, rng):
        g, S, op, amap, b = random_problem(rng, 5, 5, 22)
        fits = []
        for k in range(1, 16):
            f = gengk_factorize(amap, op, b, 0.25, k=k, reorthogonalize=True)
            sol = solve(f, 1.0, op, amap, b)
            fits.append(np.linalg.norm(amap.apply(sol.x_star) - b))
        for a, c in zip(fits, fits[1:]):
            assert c <= a + 1e-9

    def test_rejects_nonpositive_sigma2(self, rng):
        g = GridSpec(3, 3)
        op = identity_operator(g)
        amap = SparseMap.identity(g.n)
        b = rng.standard_normal(g.n)
        f = gengk_factorize(amap, op, b, 1.0, k=2)
        with pytest.raises(ValueError):
            solve(f, 0.0, op)
