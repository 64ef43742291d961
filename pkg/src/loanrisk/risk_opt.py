"""Tail-risk estimators and simplex-constrained risk minimization.

VaR is the negated scenario return at the sorted position floor((1-a)*k);
CVaR is the negated mean of the worst max(1, floor((1-a)*k)) scenarios.
The minimizer runs a multi-start SQP local search on a linearly
interpolated (hence almost-everywhere differentiable) percentile
surrogate, then reports the exact estimator at the winning weights. Equal
weights are always a start point, so the solution never does worse than
naive diversification.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize as _scipy_minimize

from .rng import Stream, derive_seed
from .simulation import ScenarioMatrix

MEASURES = ("var", "cvar")


@dataclass(frozen=True)
class RiskSpec:
    """Risk measure selection: measure name and confidence level.

    The horizon is one month throughout; returns entering the estimators
    are monthly rates.
    """

    measure: str = "var"
    alpha: float = 0.95

    def __post_init__(self):
        if self.measure not in MEASURES:
            raise ValueError(f"measure must be one of {MEASURES}, got {self.measure!r}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"confidence must lie in (0, 1), got {self.alpha}")


def _tail_position(alpha: float, k: int) -> float:
    # the epsilon compensates the binary representation of confidences like
    # 0.9, so floor((1-alpha)*k) matches its real-number value
    return (1.0 - alpha) * k + 1e-9


def _tail_index(alpha: float, k: int) -> int:
    return min(max(int(math.floor(_tail_position(alpha, k))), 0), k - 1)


def var(returns, alpha: float) -> float:
    """Loss not exceeded with confidence alpha, as a positive monthly loss."""
    r = np.asarray(returns, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty return vector")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {alpha}")
    idx = _tail_index(alpha, r.size)
    return float(-np.partition(r, idx)[idx])


def cvar(returns, alpha: float) -> float:
    """Mean loss over the worst floor((1-alpha)*k) scenarios (at least one)."""
    r = np.asarray(returns, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty return vector")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"confidence must lie in (0, 1), got {alpha}")
    m = max(1, int(math.floor(_tail_position(alpha, r.size))))
    tail = np.partition(r, m - 1)[:m]
    return float(-tail.mean())


def measure_value(returns, spec: RiskSpec) -> float:
    return var(returns, spec.alpha) if spec.measure == "var" else cvar(returns, spec.alpha)


def _smooth_rows(portfolio_rows: np.ndarray, spec: RiskSpec) -> np.ndarray:
    """Interpolated-percentile surrogate of the measure, one value per row."""
    s = np.sort(portfolio_rows, axis=1)
    k = s.shape[1]
    if spec.measure == "var":
        pos = min(max((1.0 - spec.alpha) * k, 0.0), k - 1.0)
        i0 = int(math.floor(pos))
        frac = pos - i0
        i1 = min(i0 + 1, k - 1)
        return -((1.0 - frac) * s[:, i0] + frac * s[:, i1])
    m = min(max((1.0 - spec.alpha) * k, 1e-12), float(k))
    i0 = int(math.floor(m))
    if i0 >= 1:
        tail = s[:, :i0].sum(axis=1) + (m - i0) * s[:, min(i0, k - 1)]
    else:
        tail = m * s[:, 0]
    return -tail / m


@dataclass(frozen=True)
class OptimizerConfig:
    """Search budget for minimize_risk.

    n_starts local searches run from equal weights plus seeded flat-
    Dirichlet draws; `prescreen` extra Dirichlet points are scored exactly
    (vectorized) and the best joins the start list. `polish_steps` runs a
    pairwise weight-transfer descent on the exact objective around the
    incumbent, coarse steps first; empty disables it.
    """

    n_starts: int = 10
    maxiter: int = 200
    ftol: float = 1e-6
    fd_step: float = 1e-4
    seed: int = 0
    prescreen: int = 4096
    polish_steps: tuple[float, ...] = (0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001)
    polish_sweeps: int = 60

    def __post_init__(self):
        if self.n_starts < 1 or self.maxiter < 1:
            raise ValueError("need at least one start and one iteration")
        if self.ftol <= 0 or self.fd_step <= 0:
            raise ValueError("tolerance and step must be positive")
        if self.prescreen < 0 or self.polish_sweeps < 0:
            raise ValueError("prescreen and polish budgets cannot be negative")


@dataclass(frozen=True)
class PortfolioSolution:
    """Feasible weights with the exact measure value achieved there."""

    weights: np.ndarray
    objective: float
    evaluations: int
    start_index: int


def _project_to_simplex(w: np.ndarray, n: int) -> np.ndarray:
    w = np.clip(np.nan_to_num(w, nan=0.0), 0.0, None)
    total = w.sum()
    if total <= 0:
        return np.full(n, 1.0 / n)
    return w / total


def _exact_rows(candidates: np.ndarray, returns: np.ndarray, spec: RiskSpec) -> np.ndarray:
    """Exact measure for many weight rows at once."""
    portfolio = candidates @ returns
    k = portfolio.shape[1]
    if spec.measure == "var":
        idx = _tail_index(spec.alpha, k)
        return -np.partition(portfolio, idx, axis=1)[:, idx]
    m = max(1, int(math.floor(_tail_position(spec.alpha, k))))
    return -np.partition(portfolio, m - 1, axis=1)[:, :m].mean(axis=1)


def minimize_risk(
    matrix: ScenarioMatrix, spec: RiskSpec, cfg: OptimizerConfig | None = None
) -> PortfolioSolution:
    """Minimize the chosen measure over simplex weights on a fixed matrix.

    Three phases: an exact-objective scan of seeded Dirichlet points, a
    multi-start local SQP with batched forward-difference gradients on
    the smooth surrogate, and a pairwise weight-transfer descent on the
    exact objective from the incumbent. Equal weights always enter the
    candidate pool, so the answer never does worse than naive
    diversification; ties between starts break toward the lowest index.
    """
    cfg = cfg or OptimizerConfig()
    returns = matrix.returns
    if not np.all(np.isfinite(returns)):
        raise ValueError("scenario matrix contains non-finite entries")
    n, k = returns.shape

    evaluations = 0

    def exact(w: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        return measure_value(w @ returns, spec)

    equal = np.full(n, 1.0 / n)
    if n == 1:
        weights = np.asarray([1.0])
        return PortfolioSolution(weights, exact(weights), evaluations, 0)
    if np.all(returns == returns[0]):
        # every loan identical: the objective is constant in the weights
        return PortfolioSolution(equal, exact(equal), evaluations, 0)

    def smooth(w: np.ndarray) -> float:
        nonlocal evaluations
        evaluations += 1
        return float(_smooth_rows((w @ returns)[None, :], spec)[0])

    eye = np.eye(n)

    def smooth_grad(w: np.ndarray) -> np.ndarray:
        nonlocal evaluations
        evaluations += n + 1
        stacked = np.vstack([w, w + cfg.fd_step * eye])
        values = _smooth_rows(stacked @ returns, spec)
        return (values[1:] - values[0]) / cfg.fd_step

    draws = Stream(derive_seed(cfg.seed, "optimizer-starts"))
    starts = [equal]
    for _ in range(cfg.n_starts - 1):
        starts.append(draws.dirichlet(n))

    if cfg.prescreen > 0:
        scan = Stream(derive_seed(cfg.seed, "optimizer-prescreen"))
        best_scan_value, best_scan_w = np.inf, None
        remaining = cfg.prescreen
        while remaining > 0:
            block = min(remaining, 2048)
            spacings = -np.log(1.0 - scan.uniforms(block * n)).reshape(block, n)
            points = spacings / spacings.sum(axis=1, keepdims=True)
            values = _exact_rows(points, returns, spec)
            evaluations += block
            pick = int(np.argmin(values))
            if values[pick] < best_scan_value:
                best_scan_value, best_scan_w = float(values[pick]), points[pick]
            remaining -= block
        starts.append(best_scan_w)

    candidates = [(exact(equal), 0, equal)]
    constraints = [{"type": "eq", "fun": lambda w: w.sum() - 1.0, "jac": lambda w: np.ones(n)}]
    for index, x0 in enumerate(starts):
        result = _scipy_minimize(
            smooth,
            x0,
            jac=smooth_grad,
            method="SLSQP",
            bounds=[(0.0, 1.0)] * n,
            constraints=constraints,
            options={"maxiter": cfg.maxiter, "ftol": cfg.ftol},
        )
        w = _project_to_simplex(result.x, n)
        candidates.append((exact(w), index, w))

    best_value, best_index, best_w = min(candidates, key=lambda c: (c[0], c[1]))

    if cfg.polish_steps and cfg.polish_sweeps:
        best_w, best_value, polish_evals = _pairwise_polish(
            best_w, best_value, returns, spec, cfg.polish_steps, cfg.polish_sweeps
        )
        evaluations += polish_evals

    return PortfolioSolution(best_w, best_value, evaluations, best_index)


def _pairwise_polish(w, value, returns, spec, steps, max_sweeps):
    """Greedy descent over single-pair weight transfers, exact objective.

    The estimators are piecewise constant in the weights, so gradient
    steps stall on plateaus; direct transfers between loan pairs keep
    making progress at shrinking step sizes while staying on the simplex.
    """
    n = returns.shape[0]
    give, take = np.repeat(np.arange(n), n - 1), np.empty(n * (n - 1), dtype=np.int64)
    pos = 0
    for i in range(n):
        for j in range(n):
            if i != j:
                take[pos] = j
                pos += 1
    evaluations = 0
    sweeps = 0
    changed = False
    for step in steps:
        improved = True
        while improved and sweeps < max_sweeps:
            improved = False
            sweeps += 1
            movable = w[give] >= step - 1e-15
            if not movable.any():
                continue
            g, t = give[movable], take[movable]
            trial = np.repeat(w[None, :], g.size, axis=0)
            rows = np.arange(g.size)
            trial[rows, g] -= step
            trial[rows, t] += step
            feasible = trial[rows, t] <= 1.0 + 1e-12
            trial = np.clip(trial[feasible], 0.0, 1.0)
            if trial.size == 0:
                continue
            values = _exact_rows(trial, returns, spec)
            evaluations += trial.shape[0]
            pick = int(np.argmin(values))
            if values[pick] < value - 1e-15:
                w = trial[pick] / trial[pick].sum()
                value = float(values[pick])
                improved = True
                changed = True
    if changed:
        # report the exact value at the renormalized weights actually returned
        value = float(_exact_rows(w[None, :], returns, spec)[0])
        evaluations += 1
    return w, value, evaluations
