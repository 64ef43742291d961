"""Survival-based lifetime modelling and the two-branch DSNN.

A Weibull baseline hazard, scaled per loan by e^g where g is the output of
a survival network (SNN), yields a discrete distribution over the month a
loan defaults. A second branch (an expert default-rate classifier, DNN)
supervises the survival branch through a squared-difference penalty
between the classifier's default probability and the one implied by the
survival curve at the end of the term. Prediction uses the survival
branch only.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import neural
from .loan_math import default_return_curve
from .neural import (
    Network,
    NetworkSpec,
    TrainConfig,
    TrainingError,
    forward,
    init_network,
    log_cumulative_hazard,
)
from .rng import Stream, derive_seed

_MASS_TOL = 1e-9
HIDDEN_SIZES = (128, 64, 32)


@dataclass(frozen=True)
class WeibullParams:
    """Baseline Weibull hazard parameters: scale (1/months) and shape."""

    scale: float
    shape: float

    def __post_init__(self):
        if not (math.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"Weibull scale must be positive and finite, got {self.scale}")
        if not (math.isfinite(self.shape) and self.shape > 0):
            raise ValueError(f"Weibull shape must be positive and finite, got {self.shape}")


def survival_network_spec(input_width: int, l2: float = 1e-4, seed: int = 0) -> NetworkSpec:
    """SNN branch: sigmoid in the last hidden layer, unbounded linear output."""
    return NetworkSpec(
        layer_sizes=(input_width, *HIDDEN_SIZES, 1),
        activations=("tanh", "tanh", "sigmoid", "linear"),
        l2_coefficient=l2,
        seed=seed,
    )


def expert_network_spec(input_width: int, l2: float = 1e-4, seed: int = 0) -> NetworkSpec:
    """Expert default-rate branch: tanh hidden layers, sigmoid output."""
    return NetworkSpec(
        layer_sizes=(input_width, *HIDDEN_SIZES, 1),
        activations=("tanh", "tanh", "tanh", "sigmoid"),
        l2_coefficient=l2,
        seed=seed,
    )


# --- Weibull baseline fit ---------------------------------------------------


def fit_weibull(lifetimes, events, censored: bool = True) -> WeibullParams:
    """Maximum-likelihood Weibull fit to (possibly right-censored) lifetimes.

    Events contribute density terms; with `censored` (the default),
    non-events contribute survival terms, otherwise every lifetime is
    treated as an exact event time. The shape is found by safeguarded
    Newton on the profile-likelihood score over [1e-3, 1e3] with bisection
    fallback; the scale is closed-form given the shape. Zero lifetimes are
    clamped to half a month.
    """
    t = np.asarray(lifetimes, dtype=np.float64)
    e = np.asarray(events, dtype=np.float64)
    if t.shape != e.shape or t.ndim != 1:
        raise ValueError("lifetimes and events must be 1-D arrays of equal length")
    if np.any(t < 0) or not np.all(np.isfinite(t)):
        raise ValueError("lifetimes must be finite and non-negative")
    if not np.all((e == 0) | (e == 1)):
        raise ValueError("events must be 0 or 1")
    if not censored:
        e = np.ones_like(e)
    n_events = e.sum()
    if n_events < 1:
        raise ValueError("Weibull fit needs at least one event")

    # a zero lifetime (default before any payment) counts as half a month
    t = np.where(t == 0.0, 0.5, t)
    log_t = np.log(t)
    mean_event_log_t = float((e * log_t).sum() / n_events)

    def score_and_slope(shape):
        # profile-likelihood score in the shape parameter; strictly decreasing
        x = shape * log_t
        x -= x.max()
        w = np.exp(x)
        w /= w.sum()
        mean_w = float((w * log_t).sum())
        var_w = float((w * (log_t - mean_w) ** 2).sum())
        return 1.0 / shape + mean_event_log_t - mean_w, -1.0 / shape**2 - var_w

    lo, hi = 1e-3, 1e3
    f_lo, _ = score_and_slope(lo)
    f_hi, _ = score_and_slope(hi)
    if f_hi >= 0.0:
        raise ValueError(
            "degenerate lifetimes: Weibull shape diverges (no spread among event times)"
        )
    if f_lo <= 0.0:
        raise ValueError("Weibull shape below 1e-3; data outside the supported range")

    shape = 1.0 if lo < 1.0 < hi else 0.5 * (lo + hi)
    for _ in range(200):
        f, slope = score_and_slope(shape)
        if f > 0.0:
            lo = shape
        else:
            hi = shape
        step = f / slope
        candidate = shape - step
        if not (lo < candidate < hi):
            candidate = 0.5 * (lo + hi)
        if abs(candidate - shape) <= 1e-12 * shape or abs(f) < 1e-14:
            shape = candidate
            break
        shape = candidate

    # scale from the stationarity condition, in log domain for stability
    x = shape * log_t
    x_max = x.max()
    log_sum_t_shape = x_max + math.log(float(np.exp(x - x_max).sum()))
    scale = math.exp((math.log(n_events) - log_sum_t_shape) / shape)
    return WeibullParams(scale=scale, shape=shape)


# --- hazard / survival / lifetime distribution ------------------------------


def hazard(t, params: WeibullParams, g):
    """Instantaneous default rate at time t, scaled by e^g."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr <= 0):
        raise ValueError("hazard is defined for t > 0 only")
    lam, rho = params.scale, params.shape
    value = lam**rho * rho * t_arr ** (rho - 1.0) * np.exp(g)
    return float(value) if np.isscalar(t) and np.isscalar(g) else value


def survival(t, params: WeibullParams, g):
    """Probability of no default by time t: exp(-(scale*t)^shape * e^g)."""
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0):
        raise ValueError("survival is defined for t >= 0")
    value = np.exp(-np.exp(log_cumulative_hazard(t_arr, g, params.scale, params.shape)))
    return float(value) if np.isscalar(t) and np.isscalar(g) else value


@dataclass(frozen=True)
class LifetimeDistribution:
    """Discrete default-month probabilities plus the no-default mass.

    probs[i] is the probability of defaulting after exactly i payments
    (i = 0..term-1); tail is the probability of never defaulting. probs[0]
    is exactly 0: the continuous survival curve starts at 1.
    """

    probs: np.ndarray
    tail: float

    def __post_init__(self):
        if np.any(self.probs < 0) or self.tail < 0:
            raise ValueError("lifetime distribution has a negative mass")
        total = float(self.probs.sum() + self.tail)
        if abs(total - 1.0) > _MASS_TOL:
            raise ValueError(f"lifetime distribution mass {total} is not 1")


def lifetime_distribution(params: WeibullParams, g: float, term: int) -> LifetimeDistribution:
    """Month-by-month default probabilities from the survival curve.

    probs[i] = S(i-1) - S(i) for i >= 1 and 1 - S(0) = 0 for i = 0; the
    tail is S(term-1). The masses telescope to exactly 1.
    """
    if int(term) != term or term < 1:
        raise ValueError(f"term must be a positive integer, got {term}")
    term = int(term)
    s = survival(np.arange(term, dtype=np.float64), params, g)
    probs = np.empty(term)
    probs[0] = 1.0 - s[0]
    probs[1:] = s[:-1] - s[1:]
    return LifetimeDistribution(probs=probs, tail=float(s[-1]))


def snn_default_rate(params: WeibullParams, g, term: int):
    """Default probability implied by the survival curve at the last month.

    Shares the survival code path, so this equals
    1 - lifetime_distribution(...).tail bit-for-bit.
    """
    if int(term) != term or term < 2:
        raise ValueError(f"term must be an integer >= 2, got {term}")
    return 1.0 - survival(float(term - 1), params, g)


# --- return distributions ----------------------------------------------------


@dataclass(frozen=True)
class CategoricalReturnDistribution:
    """Loan-return distribution with one support point per default month.

    support[i] is the monthly return after i payments for i < term and the
    promised rate last; masses align with LifetimeDistribution order.
    """

    support: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        if self.support.shape != self.masses.shape:
            raise ValueError("support and masses must have equal length")
        if np.any(self.masses < 0):
            raise ValueError("negative probability mass")
        if abs(float(self.masses.sum()) - 1.0) > _MASS_TOL:
            raise ValueError("probability masses must sum to 1")

    def mean(self) -> float:
        return float(self.support @ self.masses)


# --- DSNN: joint training of survival and expert branches -------------------


@dataclass
class SurvivalModel:
    """Survival branch alone: network output g plus the fitted baseline."""

    snn: Network
    weibull: WeibullParams


@dataclass
class DsnnModel:
    """Both branches plus the baseline; prediction uses the SNN branch only."""

    snn: Network
    dnn: Network
    weibull: WeibullParams
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)


def dsnn_objective_and_gradients(
    snn: Network,
    dnn: Network,
    weibull: WeibullParams,
    x: np.ndarray,
    lifetimes: np.ndarray,
    events: np.ndarray,
    terms_months: np.ndarray,
    loss_weights: tuple[float, float, float],
    class_weight_positive: float,
):
    """Combined two-branch objective with gradients for both networks.

    The survival branch feeds a consistency neuron computing the implied
    default rate 1 - S(term-1); its squared distance to the expert's
    probability back-propagates into both branches. Returns
    (total, components, snn grads, dnn grads).
    """
    w_snn, w_dnn, w_dif = loss_weights
    lam, rho = weibull.scale, weibull.shape

    snn_cache = neural._forward_cached(snn, x)
    dnn_cache = neural._forward_cached(dnn, x)
    g = snn_cache[-1][:, 0]
    p_expert = dnn_cache[-1][:, 0]

    value_snn = neural.loss_survival_nll(g, lifetimes, events, lam, rho)
    value_dnn = neural.loss_weighted_bce(p_expert, events, class_weight_positive)

    # implied default rate at each loan's horizon (the consistency neuron)
    cum_horizon = np.exp(log_cumulative_hazard(terms_months - 1.0, g, lam, rho))
    p_implied = 1.0 - np.exp(-cum_horizon)
    value_dif = neural.loss_dif(p_expert, p_implied)

    batch = g.size
    d_g = np.zeros(batch)
    d_p = np.zeros(batch)
    if w_snn != 0.0:
        d_g = w_snn * neural._grad_survival_nll(g, lifetimes, events, lam, rho)
    if w_dnn != 0.0:
        d_p = w_dnn * neural._grad_weighted_bce(p_expert, events, class_weight_positive)
    if w_dif != 0.0:
        gap = p_expert - p_implied
        d_p = d_p + w_dif * (2.0 / batch) * gap
        # d p_implied / d g = exp(-cum) * cum
        d_g = d_g - w_dif * (2.0 / batch) * gap * np.exp(-cum_horizon) * cum_horizon

    grad_w_snn, grad_b_snn = neural._backprop(snn, snn_cache, d_g[:, None])
    grad_w_dnn, grad_b_dnn = neural._backprop(dnn, dnn_cache, d_p[:, None])

    penalty = neural.l2_penalty(snn) + neural.l2_penalty(dnn)
    if snn.spec.l2_coefficient > 0:
        for gw, w in zip(grad_w_snn, snn.weights):
            gw += 2.0 * snn.spec.l2_coefficient * w
    if dnn.spec.l2_coefficient > 0:
        for gw, w in zip(grad_w_dnn, dnn.weights):
            gw += 2.0 * dnn.spec.l2_coefficient * w

    total = w_snn * value_snn + w_dnn * value_dnn + w_dif * value_dif + penalty
    components = {"snn": value_snn, "dnn": value_dnn, "dif": value_dif, "total": total}
    return total, components, (grad_w_snn, grad_b_snn), (grad_w_dnn, grad_b_dnn)


@dataclass
class DsnnTrainResult:
    model: DsnnModel
    trace: list[dict]
    initial: dict
    final: dict


def _training_arrays(records):
    x = np.stack([r.features for r in records])
    lifetimes = np.asarray([float(r.lifetime) for r in records])
    events = np.asarray([float(r.default_flag) for r in records])
    terms = np.asarray([float(r.terms.term_months) for r in records])
    return x, lifetimes, events, terms


def _auto_class_weight(events: np.ndarray, override: float | None) -> float:
    if override is not None:
        return override
    positives = float(events.sum())
    negatives = float(events.size - positives)
    if positives == 0 or negatives == 0:
        return 1.0
    return negatives / positives


def train_dsnn(
    records,
    cfg: TrainConfig,
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0),
    weibull: WeibullParams | None = None,
    censored: bool = True,
    l2: float = 1e-4,
) -> DsnnTrainResult:
    """Fit the Weibull baseline, then jointly train both DSNN branches.

    One combined backward pass per mini-batch updates both networks. The
    trace holds per-epoch batch means of each loss component; `initial`
    and `final` are full-training-set component values before and after.
    """
    if len(records) == 0:
        raise ValueError("training set is empty")
    if any(w < 0 for w in loss_weights):
        raise ValueError("loss weights must be non-negative")
    x, lifetimes, events, terms = _training_arrays(records)
    if weibull is None:
        weibull = fit_weibull(lifetimes, events, censored=censored)
    # The expert's probabilities feed a consistency comparison against the
    # survival curve, so they must stay calibrated: re-weighting the BCE
    # inflates them and drags the survival branch off its likelihood.
    class_weight = cfg.class_weight_positive if cfg.class_weight_positive is not None else 1.0

    d = x.shape[1]
    snn = init_network(survival_network_spec(d, l2=l2, seed=derive_seed(cfg.seed, "snn")))
    dnn = init_network(expert_network_spec(d, l2=l2, seed=derive_seed(cfg.seed, "dnn")))

    def full_components():
        _, comps, _, _ = dsnn_objective_and_gradients(
            snn, dnn, weibull, x, lifetimes, events, terms, loss_weights, class_weight
        )
        return comps

    initial = full_components()
    shuffles = Stream(derive_seed(cfg.seed, "epoch-shuffle"))
    n = x.shape[0]
    trace = []
    for epoch in range(cfg.epochs):
        order = shuffles.permutation(n)
        batch_comps = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            total, comps, grads_snn, grads_dnn = dsnn_objective_and_gradients(
                snn,
                dnn,
                weibull,
                x[idx],
                lifetimes[idx],
                events[idx],
                terms[idx],
                loss_weights,
                class_weight,
            )
            if not math.isfinite(total):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch starting {start}")
            neural.sgd_step(snn, *grads_snn, cfg.learning_rate)
            neural.sgd_step(dnn, *grads_dnn, cfg.learning_rate)
            batch_comps.append(comps)
        trace.append(
            {key: float(np.mean([c[key] for c in batch_comps])) for key in batch_comps[0]}
        )
    final = full_components()
    model = DsnnModel(snn=snn, dnn=dnn, weibull=weibull, loss_weights=loss_weights)
    return DsnnTrainResult(model=model, trace=trace, initial=initial, final=final)


@dataclass
class SurvivalTrainResult:
    model: SurvivalModel
    trace: list[float]


def train_snn_only(
    records,
    cfg: TrainConfig,
    weibull: WeibullParams | None = None,
    censored: bool = True,
    l2: float = 1e-4,
) -> SurvivalTrainResult:
    """Baseline ablation: train the survival branch alone.

    Uses the same derived init seed and shuffle stream as the joint
    trainer, so differences against DSNN isolate the expert connection.
    """
    if len(records) == 0:
        raise ValueError("training set is empty")
    x, lifetimes, events, _ = _training_arrays(records)
    if weibull is None:
        weibull = fit_weibull(lifetimes, events, censored=censored)
    snn = init_network(survival_network_spec(x.shape[1], l2=l2, seed=derive_seed(cfg.seed, "snn")))
    trace = neural.train(
        snn, x, (lifetimes, events), neural.SurvivalNLL(weibull.scale, weibull.shape), cfg
    )
    return SurvivalTrainResult(model=SurvivalModel(snn=snn, weibull=weibull), trace=trace)


def evaluate_snn_nll(snn: Network, weibull: WeibullParams, x, lifetimes, events) -> float:
    """Survival negative log-likelihood of a trained branch on a dataset."""
    g = forward(snn, np.asarray(x, dtype=np.float64))[:, 0]
    return neural.loss_survival_nll(g, lifetimes, events, weibull.scale, weibull.shape)


def predict_dsnn(model, loan) -> CategoricalReturnDistribution:
    """Full per-month return distribution for one loan.

    Accepts a DsnnModel or a SurvivalModel; only the survival branch and
    the Weibull baseline are consulted.
    """
    features = np.asarray(loan.features, dtype=np.float64)
    if features.shape[0] != model.snn.input_width:
        raise ValueError(
            f"feature width {features.shape[0]} does not match model ({model.snn.input_width})"
        )
    g = float(forward(model.snn, features)[0])
    terms = loan.terms
    dist = lifetime_distribution(model.weibull, g, terms.term_months)
    support = np.concatenate([default_return_curve(terms), [terms.monthly_rate]])
    masses = np.concatenate([dist.probs, [dist.tail]])
    return CategoricalReturnDistribution(support=support, masses=masses)


# --- persistence -------------------------------------------------------------


def save_survival_model(model, directory) -> None:
    """Persist a DsnnModel or SurvivalModel to a directory, bit-exactly."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    is_dsnn = isinstance(model, DsnnModel)
    manifest = {
        "format_version": 1,
        "kind": "dsnn" if is_dsnn else "snn",
        "weibull_scale": model.weibull.scale,
        "weibull_shape": model.weibull.shape,
    }
    neural.save_network(model.snn, directory / "snn.npz")
    if is_dsnn:
        manifest["loss_weights"] = list(model.loss_weights)
        neural.save_network(model.dnn, directory / "dnn.npz")
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))


def load_survival_model(directory):
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    weibull = WeibullParams(scale=manifest["weibull_scale"], shape=manifest["weibull_shape"])
    snn = neural.load_network(directory / "snn.npz")
    if manifest["kind"] == "dsnn":
        return DsnnModel(
            snn=snn,
            dnn=neural.load_network(directory / "dnn.npz"),
            weibull=weibull,
            loss_weights=tuple(manifest["loss_weights"]),
        )
    return SurvivalModel(snn=snn, weibull=weibull)
