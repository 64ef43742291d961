import math

import numpy as np
import pytest

from loanrisk.rng import Stream
from loanrisk.risk_opt import (
    OptimizerConfig,
    RiskSpec,
    cvar,
    measure_value,
    minimize_risk,
    var,
)
from loanrisk.simulation import ScenarioMatrix


def tail_size(alpha, k):
    # same real-number reading of floor((1-alpha)*k) as the estimators
    return int(math.floor((1 - alpha) * k + 1e-9))


def sort_index_oracle(returns, alpha):
    ordered = sorted(returns)
    idx = min(max(tail_size(alpha, len(ordered)), 0), len(ordered) - 1)
    return -ordered[idx]


def tail_mean_oracle(returns, alpha):
    ordered = sorted(returns)
    m = max(1, tail_size(alpha, len(ordered)))
    return -sum(ordered[:m]) / m


class TestVar:
    def test_constant_vector(self):
        assert var(np.full(100, 0.0123), 0.95) == -0.0123

    def test_position_formula_small_k(self):
        # k=20, alpha=0.9: floor(0.1 * 20) = 2, the third-smallest value
        returns = np.asarray([5, -3, 0, 7, 1, -8, 2, 9, 4, -1, 3, 6, 8, -2, 10, 11, 12, 13, 14, 15], float)
        assert var(returns, 0.9) == -sorted(returns)[2]

    def test_matches_sort_oracle_randomly(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            returns = rng.normal(size=1000)
            assert var(returns, 0.95) == sort_index_oracle(returns, 0.95)

    def test_extreme_alpha_clamps_index(self):
        returns = np.asarray([3.0, -1.0, 2.0])
        assert var(returns, 0.999) == 1.0  # index clamps to the minimum
        assert var(returns, 0.001) == -3.0  # index clamps to the maximum

    def test_errors(self):
        with pytest.raises(ValueError):
            var(np.asarray([]), 0.95)
        with pytest.raises(ValueError):
            var(np.asarray([1.0]), 1.5)


class TestCvar:
    def test_constant_equals_var(self):
        returns = np.full(50, -0.02)
        assert cvar(returns, 0.95) == var(returns, 0.95) == 0.02

    def test_hand_tail_mean(self):
        returns = np.zeros(100)
        returns[0], returns[1] = -0.4, -0.2
        # m = 5 worst: {-0.4, -0.2, 0, 0, 0}
        assert cvar(returns, 0.95) == pytest.approx(0.12, rel=1e-12)

    def test_matches_tail_mean_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            returns = rng.normal(size=500)
            assert cvar(returns, 0.9) == pytest.approx(
                tail_mean_oracle(returns, 0.9), rel=1e-12
            )

    def test_dominates_var(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            returns = rng.normal(size=int(rng.integers(1, 400)))
            alpha = float(rng.uniform(0.5, 0.999))
            assert cvar(returns, alpha) >= var(returns, alpha) - 1e-12


class TestEstimatorProperties:
    def test_translation(self):
        rng = np.random.default_rng(3)
        returns = rng.normal(size=777)
        for shift in (-0.5, 0.01, 2.0):
            assert var(returns + shift, 0.95) == pytest.approx(
                var(returns, 0.95) - shift, abs=1e-12
            )
            assert cvar(returns + shift, 0.95) == pytest.approx(
                cvar(returns, 0.95) - shift, abs=1e-12
            )

    def test_positive_homogeneity(self):
        rng = np.random.default_rng(4)
        returns = rng.normal(size=777)
        for scale in (0.2, 3.0):
            assert var(returns * scale, 0.9) == pytest.approx(
                scale * var(returns, 0.9), abs=1e-12
            )
            assert cvar(returns * scale, 0.9) == pytest.approx(
                scale * cvar(returns, 0.9), abs=1e-12
            )


def binary_instance(seed, n=5, k=2000):
    stream = Stream(seed)
    p = 0.02 + 0.25 * stream.uniforms(n)
    promised = 0.005 + 0.01 * stream.uniforms(n)
    crashed = -1.0 + 0.9 * stream.uniforms(n)
    rows = np.empty((n, k))
    for i in range(n):
        u = stream.uniforms(k)
        rows[i] = np.where(u < p[i], crashed[i], promised[i])
    return ScenarioMatrix(returns=rows, seed=0)


class TestMinimizeRisk:
    def test_single_loan(self):
        matrix = binary_instance(0, n=1)
        solution = minimize_risk(matrix, RiskSpec("var", 0.95))
        assert np.array_equal(solution.weights, [1.0])
        assert solution.objective == var(matrix.returns[0], 0.95)

    def test_identical_rows_return_equal_weights(self):
        row = np.linspace(-0.2, 0.01, 100)
        matrix = ScenarioMatrix(returns=np.vstack([row] * 4), seed=0)
        solution = minimize_risk(matrix, RiskSpec("cvar", 0.95))
        assert np.allclose(solution.weights, 0.25)

    def test_feasibility(self):
        for seed in range(5):
            matrix = binary_instance(seed)
            solution = minimize_risk(
                matrix, RiskSpec("var", 0.95), OptimizerConfig(seed=seed, prescreen=256)
            )
            assert np.all(solution.weights >= 0)
            assert np.all(solution.weights <= 1)
            assert solution.weights.sum() == pytest.approx(1.0, abs=1e-9)

    def test_never_worse_than_equal_weights(self):
        for seed in range(5):
            matrix = binary_instance(seed + 50)
            spec = RiskSpec("cvar" if seed % 2 else "var", 0.95)
            solution = minimize_risk(matrix, spec, OptimizerConfig(seed=seed, prescreen=128))
            equal = measure_value(np.full(5, 0.2) @ matrix.returns, spec)
            assert solution.objective <= equal

    def test_two_asset_grid_oracle(self):
        # one safe constant loan, one risky loan with mass at total loss
        k = 2000
        stream = Stream(99)
        risky = np.where(stream.uniforms(k) < 0.3, -1.0, 0.02)
        safe = np.full(k, 0.004)
        matrix = ScenarioMatrix(returns=np.vstack([safe, risky]), seed=0)
        spec = RiskSpec("var", 0.95)
        solution = minimize_risk(matrix, spec, OptimizerConfig(seed=1))
        grid_best = min(
            measure_value(np.asarray([w, 1 - w]) @ matrix.returns, spec)
            for w in np.linspace(0, 1, 101)
        )
        assert solution.objective <= grid_best + 1e-12

    def test_beats_small_random_search(self):
        matrix = binary_instance(7)
        spec = RiskSpec("var", 0.95)
        solution = minimize_risk(matrix, spec, OptimizerConfig(seed=7))
        rng = np.random.default_rng(7)
        draws = rng.dirichlet(np.ones(5), size=10000)
        values = -np.partition(draws @ matrix.returns, 100, axis=1)[:, 100]
        assert solution.objective <= values.min() + 1e-6

    def test_non_finite_matrix_rejected(self):
        matrix = ScenarioMatrix(returns=np.asarray([[0.1, np.nan]]), seed=0)
        with pytest.raises(ValueError):
            minimize_risk(matrix, RiskSpec("var", 0.95))

    def test_deterministic(self):
        matrix = binary_instance(3)
        cfg = OptimizerConfig(seed=11, prescreen=256)
        a = minimize_risk(matrix, RiskSpec("var", 0.95), cfg)
        b = minimize_risk(matrix, RiskSpec("var", 0.95), cfg)
        assert np.array_equal(a.weights, b.weights)
        assert a.objective == b.objective
        assert a.start_index == b.start_index


class TestRiskSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            RiskSpec("expected_shortfall", 0.95)
        with pytest.raises(ValueError):
            RiskSpec("var", 0.0)
