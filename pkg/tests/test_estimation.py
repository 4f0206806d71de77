import numpy as np
import pytest

from kryging.estimation import FitResult, auto_init, bootstrap_uq, fit, predict
from kryging.gengk import gengk_factorize, solve
from kryging.grid import GridSpec, MaternSpec, ThetaParams
from kryging.likelihood import ModelData
from kryging.mapping import SparseMap, build_map
from kryging.simulate import simulate_dataset
from kryging.toeplitz import BttbOperator


def simulated_data(m, theta, seed, holdout=0):
    g = GridSpec(m, m)
    sim = simulate_dataset(g, theta, seed=seed)
    data = ModelData(
        y=sim.y, X=np.ones((g.n, 1)), amap=SparseMap.identity(g.n), grid=g,
        nu=theta.nu,
    )
    return g, sim, data


TRUTH = ThetaParams(beta=np.array([5.0]), sigma2=1.0, tau2=0.25, rho=0.3)


def manual_fit(grid, theta, x_hat, k=10):
    return FitResult(
        theta_hat=theta,
        x_hat=x_hat,
        objective_trace=[0.0],
        converged=True,
        iterations=1,
        grid=grid,
        k=k,
        nu=theta.nu,
    )


class TestFit:
    def test_truth_init_stays_local_and_trace_monotone(self):
        g, sim, data = simulated_data(10, TRUTH, seed=2)
        res = fit(data, k=20, init=TRUTH, max_iter=60)
        trace = np.asarray(res.objective_trace)
        assert np.all(np.diff(trace) <= 0)
        th = res.theta_hat
        assert abs(np.log(th.sigma2 / TRUTH.sigma2)) < 1.5
        assert abs(np.log(th.rho / TRUTH.rho)) < 1.5
        assert th.sigma2 > 0 and th.tau2 > 0 and th.rho > 0
        assert res.iterations <= 60

    def test_reproducible(self):
        g, sim, data = simulated_data(8, TRUTH, seed=3)
        r1 = fit(data, k=10, init=TRUTH, max_iter=30)
        r2 = fit(data, k=10, init=TRUTH, max_iter=30)
        assert r1.theta_hat.sigma2 == r2.theta_hat.sigma2
        assert r1.theta_hat.rho == r2.theta_hat.rho
        np.testing.assert_array_equal(r1.x_hat, r2.x_hat)

    def test_auto_init_heuristic(self):
        g, sim, data = simulated_data(8, TRUTH, seed=4)
        theta0 = auto_init(data)
        v = (sim.y - sim.y.mean()).var()
        assert theta0.sigma2 == pytest.approx(v / 2, rel=0.1)
        assert theta0.tau2 == pytest.approx(theta0.sigma2)
        assert theta0.rho == pytest.approx(0.1 * np.sqrt(2.0), rel=1e-6)
        assert theta0.beta[0] == pytest.approx(sim.y.mean(), rel=1e-6)

    def test_multi_start_keeps_best(self):
        g, sim, data = simulated_data(8, TRUTH, seed=5)
        other = ThetaParams(np.array([5.0]), 2.5, 0.6, 0.15)
        single = fit(data, k=10, init=TRUTH, max_iter=25)
        multi = fit(data, k=10, init=[TRUTH, other], max_iter=25)
        assert multi.objective_trace[-1] <= single.objective_trace[-1] + 1e-12


class TestPredict:
    def test_constant_field_maps_to_constant(self, rng):
        g = GridSpec(6, 6)
        theta = ThetaParams(np.array([0.0]), 1.0, 0.5, 0.2)
        res = manual_fit(g, theta, np.full(g.n, 2.5))
        locs = np.column_stack([rng.uniform(0, 1, 30), rng.uniform(0, 1, 30)])
        amap = build_map(locs, g)
        np.testing.assert_allclose(predict(res, amap), 2.5, atol=1e-12)

    def test_affine_in_mean_linear_in_field(self, rng):
        g = GridSpec(5, 5)
        x = rng.standard_normal(g.n)
        locs = np.column_stack([rng.uniform(0, 1, 12), rng.uniform(0, 1, 12)])
        amap = build_map(locs, g)
        t0 = ThetaParams(np.array([0.0]), 1.0, 1.0, 0.2)
        t1 = ThetaParams(np.array([3.0]), 1.0, 1.0, 0.2)
        base = predict(manual_fit(g, t0, x), amap)
        np.testing.assert_allclose(predict(manual_fit(g, t1, x), amap), base + 3.0, atol=1e-12)
        np.testing.assert_allclose(predict(manual_fit(g, t0, 2.0 * x), amap), 2.0 * base, atol=1e-12)

    def test_interpolation_limit_small_nugget(self, rng):
        # co-located, tiny noise, full subspace: predictions at the
        # training nodes reproduce the observations
        g = GridSpec(6, 6)
        theta = ThetaParams(np.array([0.0]), 1.0, 1e-8, 0.3)
        op = BttbOperator.from_matern(g, MaternSpec(1.0, theta.rho, theta.nu))
        amap = SparseMap.identity(g.n)
        y = op.sample(rng)
        fact = gengk_factorize(amap, op, y, theta.tau2, k=g.n, reorthogonalize=True)
        sol = solve(fact, theta.sigma2, op, amap, y)
        res = manual_fit(g, theta, sol.x_star, k=g.n)
        yhat = predict(res, SparseMap.identity(g.n))
        assert np.abs(yhat - y).max() < 1e-4

    def test_requires_covariates_when_mean_has_them(self, rng):
        g = GridSpec(4, 4)
        theta = ThetaParams(np.array([1.0, 2.0]), 1.0, 1.0, 0.2)
        res = manual_fit(g, theta, np.zeros(g.n))
        amap = SparseMap.identity(g.n)
        with pytest.raises(ValueError):
            predict(res, amap)
        X_pred = np.column_stack([np.ones(g.n), rng.standard_normal(g.n)])
        out = predict(res, amap, X_pred)
        np.testing.assert_allclose(out, X_pred @ theta.beta, atol=1e-12)


class TestBootstrap:
    def test_deterministic_given_seed(self):
        g, sim, data = simulated_data(8, TRUTH, seed=6)
        res = fit(data, k=10, init=TRUTH, max_iter=20)
        locs = data.grid.node_coords()[:25]
        p1 = bootstrap_uq(res, data, locs, B=5, seed=11, allow_unconverged=True)
        p2 = bootstrap_uq(res, data, locs, B=5, seed=11, allow_unconverged=True)
        np.testing.assert_array_equal(p1.se, p2.se)
        p3 = bootstrap_uq(res, data, locs, B=5, seed=12, allow_unconverged=True)
        assert not np.array_equal(p1.se, p3.se)

    def test_se_nonnegative_and_interval_order(self):
        g, sim, data = simulated_data(8, TRUTH, seed=7)
        res = fit(data, k=10, init=TRUTH, max_iter=20)
        locs = data.grid.node_coords()[::3]
        pset = bootstrap_uq(res, data, locs, B=6, seed=0, allow_unconverged=True)
        assert np.all(pset.se >= 0)
        assert np.all(pset.ci_lo <= pset.y_hat)
        assert np.all(pset.y_hat <= pset.ci_hi)

    def test_noiseless_identity_limit_shrinks_se(self):
        # tau2 ~ 0, A = I, k = n, theta known: the re-estimate recovers
        # each replicate field and the bootstrap errors vanish
        g = GridSpec(6, 6)
        theta = ThetaParams(np.array([0.0]), 1.0, 1e-12, 0.3)
        data = ModelData(
            y=np.zeros(g.n) + 1.0, X=np.ones((g.n, 1)),
            amap=SparseMap.identity(g.n), grid=g,
        )
        res = manual_fit(g, theta, np.zeros(g.n), k=g.n)
        pset = bootstrap_uq(res, data, g.node_coords(), B=3, seed=5, reorthogonalize=True)
        assert pset.se.max() < 1e-4

    def test_coverage_sanity_theta_known(self):
        # fields simulated from the model, theta held at truth: pooled
        # 95% interval coverage lands in a wide nominal band
        theta = ThetaParams(np.array([0.0]), 2.0, 0.4, 0.12)
        g = GridSpec(24, 24)
        hits = 0
        total = 0
        for rep in range(6):
            sim = simulate_dataset(g, theta, seed=100 + rep)
            rng = np.random.default_rng(200 + rep)
            hold = np.zeros(g.n, dtype=bool)
            hold[rng.choice(g.n, size=150, replace=False)] = True
            train_idx = np.nonzero(~hold)[0]
            amap = SparseMap.selection(train_idx, g.n)
            data = ModelData(
                y=sim.y[train_idx], X=np.ones((train_idx.size, 1)),
                amap=amap, grid=g,
            )
            op = BttbOperator.from_matern(g, MaternSpec(1.0, theta.rho, theta.nu))
            fact = gengk_factorize(amap, op, data.y, theta.tau2, k=40)
            sol = solve(fact, theta.sigma2, op, amap, data.y)
            res = manual_fit(g, theta, sol.x_star, k=40)
            locs = g.node_coords()[hold]
            pset = bootstrap_uq(res, data, locs, B=20, seed=300 + rep)
            y_true = sim.y[hold]
            hits += int(((y_true >= pset.ci_lo) & (y_true <= pset.ci_hi)).sum())
            total += y_true.size
        coverage = hits / total
        assert 0.90 <= coverage <= 0.99

    def test_rejects_bad_b(self):
        g, sim, data = simulated_data(6, TRUTH, seed=8)
        res = fit(data, k=5, init=TRUTH, max_iter=5)
        with pytest.raises(ValueError):
            bootstrap_uq(res, data, g.node_coords()[:4], B=0, allow_unconverged=True)


class TestConvergenceGate:
    def test_predict_refuses_unconverged_without_override(self):
        g, sim, data = simulated_data(6, TRUTH, seed=9)
        res = fit(data, k=5, init=TRUTH, max_iter=3)
        assert not res.converged
        amap = SparseMap.identity(g.n)
        with pytest.raises(ValueError, match="converge"):
            predict(res, amap)
        out = predict(res, amap, allow_unconverged=True)
        assert out.shape == (g.n,)


class TestCovariateMean:
    def test_fit_recovers_regression_coefficients(self, rng):
        g = GridSpec(24, 24)
        coords = g.node_coords()
        X = np.column_stack([np.ones(g.n), coords[:, 0] - 0.5])
        beta_true = np.array([4.0, 2.5])
        theta = ThetaParams(beta_true, 1.5, 0.3, 0.15)
        op = BttbOperator.from_matern(g, MaternSpec(1.0, theta.rho, theta.nu))
        x = np.sqrt(theta.sigma2) * op.sample(np.random.default_rng(31))
        y = X @ beta_true + x + np.sqrt(theta.tau2) * np.random.default_rng(32).standard_normal(g.n)
        data = ModelData(y=y, X=X, amap=SparseMap.identity(g.n), grid=g)
        res = fit(data, k=25, init=theta, max_iter=80)
        np.testing.assert_allclose(res.theta_hat.beta, beta_true, atol=0.5)
        assert res.theta_hat.beta.size == 2
