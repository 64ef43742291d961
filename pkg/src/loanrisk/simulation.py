"""Monte-Carlo scenario generation for loan portfolios.

Each column of the scenario matrix is one joint draw: every loan's return
is sampled independently from its predicted distribution (cross-loan
correlations are deliberately ignored). Cells are filled from
counter-based streams keyed by (seed, loan row, scenario column), so the
matrix is a pure function of the seed regardless of fill order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import counter_uniforms

_MASS_TOL = 1e-9
_WEIGHT_TOL = 1e-9


@dataclass(frozen=True)
class ScenarioMatrix:
    """n-by-k simulated monthly returns: one row per loan, column per draw."""

    returns: np.ndarray
    seed: int

    @property
    def n_loans(self) -> int:
        return self.returns.shape[0]

    @property
    def n_scenarios(self) -> int:
        return self.returns.shape[1]


def simulate(distributions, n_scenarios: int, seed: int) -> ScenarioMatrix:
    """Draw the scenario matrix by inverse-CDF sampling, one row per loan."""
    if n_scenarios < 1:
        raise ValueError("need at least one scenario")
    if len(distributions) == 0:
        raise ValueError("need at least one loan distribution")
    rows = []
    counters = np.arange(n_scenarios, dtype=np.uint64)
    for i, dist in enumerate(distributions):
        support = np.asarray(dist.support, dtype=np.float64)
        masses = np.asarray(dist.masses, dtype=np.float64)
        if np.any(masses < 0) or abs(float(masses.sum()) - 1.0) > _MASS_TOL:
            raise ValueError(f"distribution {i} has invalid probability masses")
        cumulative = np.cumsum(masses)
        u = counter_uniforms(seed, i, counters)
        idx = np.searchsorted(cumulative, u, side="right")
        rows.append(support[np.minimum(idx, support.size - 1)])
    return ScenarioMatrix(returns=np.vstack(rows), seed=seed)


def validate_weights(weights, n_loans: int) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n_loans,):
        raise ValueError(f"expected {n_loans} weights, got shape {w.shape}")
    if np.any(w < -_WEIGHT_TOL) or np.any(w > 1.0 + _WEIGHT_TOL):
        raise ValueError("weights must lie in [0, 1]")
    if abs(float(w.sum()) - 1.0) > _WEIGHT_TOL:
        raise ValueError(f"weights must sum to 1, got {w.sum()}")
    return w


def portfolio_returns(weights, matrix: ScenarioMatrix) -> np.ndarray:
    """Per-scenario portfolio return: the weighted sum over loans."""
    w = validate_weights(weights, matrix.n_loans)
    return w @ matrix.returns


def dump_matrix(matrix: ScenarioMatrix, path) -> None:
    """Plain text dump, one loan per line, one scenario per column."""
    np.savetxt(path, matrix.returns, fmt="%.17g")
