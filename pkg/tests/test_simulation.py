import numpy as np
import pytest

from loanrisk.denn import BinaryReturnDistribution
from loanrisk.simulation import (
    ScenarioMatrix,
    dump_matrix,
    portfolio_returns,
    simulate,
    validate_weights,
)


def binary(p_default, promised=0.01, defaulted=-0.4):
    return BinaryReturnDistribution(promised, p_default, defaulted)


class TestSimulate:
    def test_degenerate_distribution_fills_promised_rate(self):
        matrix = simulate([binary(0.0, promised=0.007)], 500, seed=1)
        assert np.all(matrix.returns == 0.007)

    def test_empirical_default_frequency(self):
        matrix = simulate([binary(0.3)], 100000, seed=2)
        frequency = float(np.mean(matrix.returns[0] == -0.4))
        assert frequency == pytest.approx(0.3, abs=0.005)

    def test_same_seed_bit_identical(self):
        dists = [binary(0.1), binary(0.5), binary(0.9)]
        a = simulate(dists, 1000, seed=3)
        b = simulate(dists, 1000, seed=3)
        assert np.array_equal(a.returns, b.returns)

    def test_different_seed_differs(self):
        dists = [binary(0.5)]
        a = simulate(dists, 1000, seed=3)
        b = simulate(dists, 1000, seed=4)
        assert not np.array_equal(a.returns, b.returns)

    def test_entries_come_from_support(self):
        matrix = simulate([binary(0.4, promised=0.01, defaulted=-1.0)], 1000, seed=5)
        assert set(np.unique(matrix.returns[0])) <= {-1.0, 0.01}

    def test_law_of_large_numbers(self):
        dist = binary(0.25, promised=0.012, defaulted=-0.6)
        matrix = simulate([dist], 100000, seed=6)
        analytic_mean = dist.mean()
        spread = float(np.std(dist.support)) * np.sqrt(0.25 * 0.75) * 2  # loose bound
        standard_error = np.std(matrix.returns[0]) / np.sqrt(matrix.n_scenarios)
        assert abs(matrix.returns[0].mean() - analytic_mean) < 3 * standard_error + 1e-12

    def test_invalid_masses_rejected(self):
        class Broken:
            support = np.asarray([0.0, 1.0])
            masses = np.asarray([0.6, 0.6])

        with pytest.raises(ValueError):
            simulate([Broken()], 10, seed=0)

    def test_needs_scenarios_and_loans(self):
        with pytest.raises(ValueError):
            simulate([binary(0.1)], 0, seed=0)
        with pytest.raises(ValueError):
            simulate([], 10, seed=0)


class TestPortfolioReturns:
    def test_single_loan_identity(self):
        matrix = simulate([binary(0.3)], 50, seed=7)
        out = portfolio_returns([1.0], matrix)
        assert np.array_equal(out, matrix.returns[0])

    def test_identical_rows_weight_independent(self):
        row = np.linspace(-0.5, 0.01, 20)
        matrix = ScenarioMatrix(returns=np.vstack([row, row, row]), seed=0)
        a = portfolio_returns([1 / 3, 1 / 3, 1 / 3], matrix)
        b = portfolio_returns([0.8, 0.1, 0.1], matrix)
        assert np.allclose(a, b, atol=1e-15)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(8)
        returns = rng.normal(size=(3, 4))
        weights = np.asarray([0.5, 0.3, 0.2])
        matrix = ScenarioMatrix(returns=returns, seed=0)
        out = portfolio_returns(weights, matrix)
        for j in range(4):
            expected = sum(weights[i] * returns[i, j] for i in range(3))
            assert out[j] == pytest.approx(expected, rel=1e-12)

    def test_convex_combination_bounds(self):
        rng = np.random.default_rng(9)
        returns = rng.normal(size=(5, 30))
        matrix = ScenarioMatrix(returns=returns, seed=0)
        rng2 = np.random.default_rng(10)
        w = rng2.dirichlet(np.ones(5))
        out = portfolio_returns(w, matrix)
        assert np.all(out <= returns.max(axis=0) + 1e-12)
        assert np.all(out >= returns.min(axis=0) - 1e-12)

    def test_weight_validation(self):
        matrix = simulate([binary(0.3), binary(0.2)], 10, seed=11)
        with pytest.raises(ValueError):
            portfolio_returns([1.0], matrix)
        with pytest.raises(ValueError):
            portfolio_returns([0.7, 0.7], matrix)
        with pytest.raises(ValueError):
            portfolio_returns([-0.2, 1.2], matrix)


def test_validate_weights_accepts_simplex():
    w = validate_weights([0.25, 0.75], 2)
    assert np.array_equal(w, [0.25, 0.75])


def test_dump_matrix_round_trips(tmp_path):
    matrix = simulate([binary(0.3), binary(0.6)], 25, seed=12)
    path = tmp_path / "matrix.txt"
    dump_matrix(matrix, path)
    loaded = np.loadtxt(path)
    assert np.array_equal(loaded, matrix.returns)
