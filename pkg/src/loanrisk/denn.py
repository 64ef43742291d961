"""Two-network return model: default probability plus default lifetime.

One classifier predicts whether a loan defaults; a second regressor,
trained on defaulted loans only, predicts how far through the term the
default happens (as a ratio of the term). Together they induce a 2-point
return distribution: the promised rate with the non-default probability,
and the post-default return with the default probability.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import neural
from .loan_math import default_return
from .neural import Network, NetworkSpec, TrainConfig, TrainingError, forward, init_network
from .rng import derive_seed
from .survival import HIDDEN_SIZES, _auto_class_weight

_MASS_TOL = 1e-9


def default_rate_network_spec(input_width: int, l2: float = 1e-4, seed: int = 0) -> NetworkSpec:
    return NetworkSpec(
        layer_sizes=(input_width, *HIDDEN_SIZES, 1),
        activations=("tanh", "tanh", "tanh", "sigmoid"),
        l2_coefficient=l2,
        seed=seed,
    )


def lifetime_network_spec(input_width: int, l2: float = 1e-4, seed: int = 0) -> NetworkSpec:
    """Same architecture as the default-rate net; output is a term ratio."""
    return default_rate_network_spec(input_width, l2=l2, seed=seed)


@dataclass
class DennModel:
    default_rate_net: Network
    lifetime_net: Network


@dataclass(frozen=True)
class BinaryReturnDistribution:
    """2-point loan-return distribution.

    The promised monthly rate carries probability 1 - default_rate; the
    predicted post-default return carries default_rate.
    """

    promised_rate: float
    default_rate: float
    defaulted_return: float

    def __post_init__(self):
        if not 0.0 <= self.default_rate <= 1.0:
            raise ValueError(f"default rate must lie in [0, 1], got {self.default_rate}")
        if self.defaulted_return < -1.0 or self.promised_rate < -1.0:
            raise ValueError("monthly returns cannot fall below -1")
        if self.defaulted_return > self.promised_rate:
            raise ValueError(
                "post-default return exceeds the promised rate; loan terms are inconsistent"
            )

    @property
    def support(self) -> np.ndarray:
        return np.asarray([self.defaulted_return, self.promised_rate])

    @property
    def masses(self) -> np.ndarray:
        return np.asarray([self.default_rate, 1.0 - self.default_rate])

    def mean(self) -> float:
        return float(self.support @ self.masses)


@dataclass
class DennTrainResult:
    model: DennModel
    default_rate_trace: list[float]
    lifetime_trace: list[float]


def train_denn(records, cfg: TrainConfig, l2: float = 1e-4) -> DennTrainResult:
    """Train the classifier on all loans and the regressor on defaults only.

    The regressor target is lifetime / term, which lies in [0, 1) for a
    defaulted loan. Raises TrainingError when the training set has no
    defaults, since the regressor then has no labels.
    """
    if len(records) == 0:
        raise ValueError("training set is empty")
    x = np.stack([r.features for r in records])
    events = np.asarray([float(r.default_flag) for r in records])

    defaulted = [r for r in records if r.default_flag == 1]
    if not defaulted:
        raise TrainingError("cannot train the lifetime regressor: no defaulted loans")
    x_default = np.stack([r.features for r in defaulted])
    ratio = np.asarray([r.lifetime / r.terms.term_months for r in defaulted])

    d = x.shape[1]
    dr_net = init_network(default_rate_network_spec(d, l2=l2, seed=derive_seed(cfg.seed, "dr")))
    dl_net = init_network(lifetime_network_spec(d, l2=l2, seed=derive_seed(cfg.seed, "dl")))

    class_weight = _auto_class_weight(events, cfg.class_weight_positive)
    dr_trace = neural.train(dr_net, x, events, neural.WeightedBCE(class_weight), cfg)
    dl_trace = neural.train(dl_net, x_default, ratio, neural.MeanSquaredError(), cfg)
    model = DennModel(default_rate_net=dr_net, lifetime_net=dl_net)
    return DennTrainResult(model=model, default_rate_trace=dr_trace, lifetime_trace=dl_trace)


def predict_denn(model: DennModel, loan) -> BinaryReturnDistribution:
    """2-point return distribution for one loan.

    The predicted default month is the regressor's ratio times the term,
    rounded to the nearest integer and clamped to [0, term - 1]; its
    return comes from the discounted-installment solve.
    """
    features = np.asarray(loan.features, dtype=np.float64)
    if features.shape[0] != model.default_rate_net.input_width:
        raise ValueError(
            f"feature width {features.shape[0]} does not match model "
            f"({model.default_rate_net.input_width})"
        )
    p_default = float(forward(model.default_rate_net, features)[0])
    ratio = float(forward(model.lifetime_net, features)[0])
    terms = loan.terms
    months = int(math.floor(ratio * terms.term_months + 0.5))
    months = min(max(months, 0), terms.term_months - 1)
    return BinaryReturnDistribution(
        promised_rate=terms.monthly_rate,
        default_rate=p_default,
        defaulted_return=default_return(terms, months),
    )


def save_denn(model: DennModel, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    neural.save_network(model.default_rate_net, directory / "default_rate.npz")
    neural.save_network(model.lifetime_net, directory / "lifetime.npz")
    (directory / "manifest.json").write_text(
        json.dumps({"format_version": 1, "kind": "denn"}, indent=2)
    )


def load_denn(directory) -> DennModel:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    if manifest["kind"] != "denn":
        raise ValueError(f"not a denn model directory: kind={manifest['kind']}")
    return DennModel(
        default_rate_net=neural.load_network(directory / "default_rate.npz"),
        lifetime_net=neural.load_network(directory / "lifetime.npz"),
    )
