import numpy as np
import pytest

from kryging.grid import GridSpec, ThetaParams
from kryging.simulate import simulate_dataset
from kryging.study import (
    format_study_tables,
    run_replicate,
    score_predictions,
    study_irregular,
)

THETA = ThetaParams(np.array([10.0]), 2.0, 0.4, 0.15)


class TestSimulate:
    def test_deterministic(self):
        g = GridSpec(12, 12)
        a = simulate_dataset(g, THETA, seed=4)
        b = simulate_dataset(g, THETA, seed=4)
        np.testing.assert_array_equal(a.y, b.y)
        np.testing.assert_array_equal(a.kept, b.kept)

    def test_thinning_counts_and_locations(self):
        g = GridSpec(20, 20)
        sim = simulate_dataset(g, THETA, seed=1, thin_fraction=0.9)
        assert sim.dataset.p == round(400 * 0.1)
        coords = g.node_coords()
        np.testing.assert_array_equal(sim.dataset.locations, coords[sim.kept])
        np.testing.assert_array_equal(sim.dataset.y, sim.y[sim.kept])

    def test_rejects_bad_fraction(self):
        with pytest.raises(ValueError):
            simulate_dataset(GridSpec(8, 8), THETA, thin_fraction=1.0)


class TestScores:
    def test_crps_at_perfect_gaussian_center(self):
        # CRPS of N(mu, se^2) evaluated at y = mu is se * (2 phi(0) - 1/sqrt(pi))
        se = np.full(50, 1.3)
        y = np.zeros(50)
        s = score_predictions(y, y, se)
        expected = 1.3 * (2.0 / np.sqrt(2 * np.pi) - 1.0 / np.sqrt(np.pi))
        assert s["crps"] == pytest.approx(expected, rel=1e-12)

    def test_interval_score_inside_band(self):
        se = np.ones(10)
        y = np.zeros(10)
        s = score_predictions(y, y, se)
        assert s["int"] == pytest.approx(2 * 1.96)
        assert s["cvg"] == 1.0

    def test_rmse_mae(self):
        s = score_predictions(np.array([0.0, 0.0]), np.array([3.0, -4.0]))
        assert s["mae"] == pytest.approx(3.5)
        assert s["rmse"] == pytest.approx(np.sqrt(12.5))


class TestRunners:
    def test_replicate_deterministic(self):
        g = GridSpec(16, 16)
        r1 = run_replicate(g, g, THETA, k=8, seed=3, B=4, max_iter=15)
        r2 = run_replicate(g, g, THETA, k=8, seed=3, B=4, max_iter=15)
        assert r1.rmse == r2.rmse
        assert r1.coverage == r2.coverage
        assert r1.theta_hat.sigma2 == r2.theta_hat.sigma2

    def test_irregular_runner_smoke(self):
        results = study_irregular(
            k=6, replicates=1, scale=1.0, seed=2, source_size=24,
            thin_fraction=0.5, latent_sizes=(16,), B=3, max_iter=10,
        )
        assert len(results) == 1
        table = format_study_tables(results)
        assert "rmse=" in table and "coverage=" in table and "rho=" in table
