"""Minimal feedforward-MLP kernel with hand-derived gradients.

Dense layers with tanh / sigmoid / linear activations, trained by plain
mini-batch gradient descent. The loss zoo covers class-weighted binary
cross-entropy, mean squared error, a Weibull-baseline survival negative
log-likelihood, and the squared-difference consistency penalty used to
tie two networks together. Gradients are exact reverse-mode derivations,
not autodiff; tests pin them against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .rng import Stream, derive_seed

PROB_FLOOR = 1e-12
# cap on exponent arguments before exponentiation
EXP_CAP = 700.0

_FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    """Raised when training produces a non-finite loss or gradient."""


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture of a fully-connected network, input layer first."""

    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    l2_coefficient: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("a network needs an input and an output layer")
        if any(int(s) != s or s <= 0 for s in self.layer_sizes):
            raise ValueError(f"layer sizes must be positive integers, got {self.layer_sizes}")
        if len(self.activations) != len(self.layer_sizes) - 1:
            raise ValueError(
                f"expected {len(self.layer_sizes) - 1} activations, got {len(self.activations)}"
            )
        unknown = set(self.activations) - {"tanh", "sigmoid", "linear"}
        if unknown:
            raise ValueError(f"unknown activations: {sorted(unknown)}")
        if self.l2_coefficient < 0:
            raise ValueError("l2 coefficient must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    """Mini-batch gradient-descent settings."""

    batch_size: int = 256
    learning_rate: float = 0.01
    epochs: int = 50
    class_weight_positive: float | None = None  # None: inverse-frequency on the data
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ValueError("batch size >= 1, epochs >= 0 and learning rate > 0 required")
        if self.class_weight_positive is not None and self.class_weight_positive <= 0:
            raise ValueError("positive-class weight must be positive")


class Network:
    """Weights and biases of one MLP. Weight l maps layer l to layer l+1."""

    def __init__(self, spec: NetworkSpec, weights: list[np.ndarray], biases: list[np.ndarray]):
        self.spec = spec
        self.weights = weights
        self.biases = biases

    @property
    def input_width(self) -> int:
        return self.spec.layer_sizes[0]

    @property
    def output_width(self) -> int:
        return self.spec.layer_sizes[-1]

    def copy(self) -> "Network":
        return Network(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def flat_params(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_flat_params(self, theta: np.ndarray) -> None:
        pos = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = theta[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[i] = theta[pos : pos + b.size].copy()
            pos += b.size
        if pos != theta.size:
            raise ValueError(f"parameter vector has {theta.size} entries, expected {pos}")


def init_network(spec: NetworkSpec) -> Network:
    """Seeded scaled-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases."""
    weights, biases = [], []
    for layer, (fan_in, fan_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        stream = Stream(derive_seed(spec.seed, f"layer-{layer}"))
        u = stream.uniforms(fan_in * fan_out).reshape(fan_in, fan_out)
        weights.append((2.0 * u - 1.0) * limit)
        biases.append(np.zeros(fan_out))
    return Network(spec, weights, biases)


def _apply_activation(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return expit(z)
    return z


def _activation_deriv(name: str, a: np.ndarray) -> np.ndarray:
    """Derivative of the activation expressed through its output a."""
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(a)


def _forward_cached(net: Network, x: np.ndarray) -> list[np.ndarray]:
    """Activations of every layer, input included. x is (batch, d)."""
    cache = [x]
    a = x
    for w, b, name in zip(net.weights, net.biases, net.spec.activations):
        a = _apply_activation(name, a @ w + b)
        cache.append(a)
    return cache


def forward(net: Network, x: np.ndarray) -> np.ndarray:
    """Dense forward pass; accepts one feature vector or a (batch, d) matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != net.input_width:
        raise ValueError(f"input width {x.shape[1]} does not match network ({net.input_width})")
    if not np.all(np.isfinite(x)):
        raise ValueError("network input must be finite")
    out = _forward_cached(net, x)[-1]
    return out[0] if single else out


def _backprop(
    net: Network, cache: list[np.ndarray], d_out: np.ndarray
) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Gradients of a scalar loss given d(loss)/d(output activations)."""
    grad_w = [None] * len(net.weights)
    grad_b = [None] * len(net.biases)
    delta = d_out
    for layer in range(len(net.weights) - 1, -1, -1):
        a_out = cache[layer + 1]
        delta = delta * _activation_deriv(net.spec.activations[layer], a_out)
        grad_w[layer] = cache[layer].T @ delta
        grad_b[layer] = delta.sum(axis=0)
        if layer > 0:
            delta = delta @ net.weights[layer].T
    return grad_w, grad_b


def clamp_probabilities(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_FLOOR, 1.0 - PROB_FLOOR)


# --- loss functions -------------------------------------------------------


def loss_weighted_bce(predictions, labels, class_weight_positive: float = 1.0) -> float:
    """Class-weighted binary cross-entropy, averaged over the batch."""
    p, e = np.asarray(predictions, float), np.asarray(labels, float)
    if p.shape != e.shape:
        raise ValueError(f"predictions and labels differ in length: {p.shape} vs {e.shape}")
    if p.size == 0:
        raise ValueError("empty batch")
    if not np.all((e == 0) | (e == 1)):
        raise ValueError("labels must be 0 or 1")
    p = clamp_probabilities(p)
    w = np.where(e == 1, class_weight_positive, 1.0)
    return float(-np.mean(w * (e * np.log(p) + (1.0 - e) * np.log(1.0 - p))))


def _grad_weighted_bce(predictions, labels, class_weight_positive):
    p = clamp_probabilities(np.asarray(predictions, float))
    e = np.asarray(labels, float)
    w = np.where(e == 1, class_weight_positive, 1.0)
    return -(w / p.size) * (e / p - (1.0 - e) / (1.0 - p))


def loss_mse(predictions, targets) -> float:
    """Mean squared error."""
    p, y = np.asarray(predictions, float), np.asarray(targets, float)
    if p.shape != y.shape:
        raise ValueError(f"predictions and targets differ in length: {p.shape} vs {y.shape}")
    if p.size == 0:
        raise ValueError("empty batch")
    return float(np.mean((p - y) ** 2))


def log_cumulative_hazard(lifetimes, outputs, lam: float, rho: float) -> np.ndarray:
    """log of (lam*t)^rho * e^g, capped so the later exp cannot overflow."""
    t = np.asarray(lifetimes, float)
    g = np.asarray(outputs, float)
    out = np.full(np.broadcast(t, g).shape, -np.inf)
    positive = t > 0
    with np.errstate(divide="ignore"):
        out = np.where(positive, rho * np.log(lam * np.maximum(t, PROB_FLOOR)) + g, out)
    return np.minimum(out, EXP_CAP)


def loss_survival_nll(outputs, lifetimes, events, lam: float, rho: float) -> float:
    """Negative log-likelihood of a Weibull hazard scaled by e^output.

    Events contribute the log-hazard at their lifetime (clamped to at least
    half a month so a zero-payment default stays finite); everyone
    contributes the log-survival at the unclamped lifetime.
    """
    if lam <= 0 or rho <= 0:
        raise ValueError(f"hazard baseline parameters must be positive, got ({lam}, {rho})")
    g = np.asarray(outputs, float)
    t = np.asarray(lifetimes, float)
    e = np.asarray(events, float)
    if not (g.shape == t.shape == e.shape):
        raise ValueError("outputs, lifetimes and events must have equal length")
    if np.any(t < 0):
        raise ValueError("lifetimes must be non-negative")
    if not np.all((e == 0) | (e == 1)):
        raise ValueError("events must be 0 or 1")
    t_eff = np.maximum(t, 0.5)
    log_h = math.log(rho) + rho * math.log(lam) + (rho - 1.0) * np.log(t_eff) + g
    log_s = -np.exp(log_cumulative_hazard(t, g, lam, rho))
    log_s = np.where(t > 0, log_s, 0.0)
    return float(-np.mean(e * log_h + log_s))


def _grad_survival_nll(outputs, lifetimes, events, lam, rho):
    g = np.asarray(outputs, float)
    t = np.asarray(lifetimes, float)
    e = np.asarray(events, float)
    cum = np.exp(log_cumulative_hazard(t, g, lam, rho))
    cum = np.where(t > 0, cum, 0.0)
    return -(e - cum) / g.size


def loss_dif(predictions_a, predictions_b) -> float:
    """Mean squared difference between two probability batches."""
    a, b = np.asarray(predictions_a, float), np.asarray(predictions_b, float)
    if a.shape != b.shape:
        raise ValueError(f"batches differ in length: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty batch")
    return float(np.mean((a - b) ** 2))


# --- loss objects used by the trainer -------------------------------------


class WeightedBCE:
    def __init__(self, class_weight_positive: float = 1.0):
        self.class_weight_positive = class_weight_positive

    def value(self, pred, target):
        return loss_weighted_bce(pred, target, self.class_weight_positive)

    def grad(self, pred, target):
        return _grad_weighted_bce(pred, target, self.class_weight_positive)


class MeanSquaredError:
    def value(self, pred, target):
        return loss_mse(pred, target)

    def grad(self, pred, target):
        pred = np.asarray(pred, float)
        return 2.0 * (pred - np.asarray(target, float)) / pred.size


class SurvivalNLL:
    def __init__(self, lam: float, rho: float):
        if lam <= 0 or rho <= 0:
            raise ValueError(f"hazard baseline parameters must be positive, got ({lam}, {rho})")
        self.lam = lam
        self.rho = rho

    def value(self, pred, target):
        lifetimes, events = target
        return loss_survival_nll(pred, lifetimes, events, self.lam, self.rho)

    def grad(self, pred, target):
        lifetimes, events = target
        return _grad_survival_nll(pred, lifetimes, events, self.lam, self.rho)


def l2_penalty(net: Network) -> float:
    """l2_coefficient times the squared norm of the weights (biases exempt)."""
    return net.spec.l2_coefficient * sum(float((w * w).sum()) for w in net.weights)


def data_loss_and_gradients(net, x, target, loss):
    """Loss value and parameter gradients for one batch, no regularizer."""
    x = np.asarray(x, dtype=np.float64)
    if net.output_width != 1:
        raise ValueError("scalar losses expect a single output neuron")
    cache = _forward_cached(net, x)
    pred = cache[-1][:, 0]
    value = loss.value(pred, target)
    d_out = np.asarray(loss.grad(pred, target), float)[:, None]
    grad_w, grad_b = _backprop(net, cache, d_out)
    return value, grad_w, grad_b


def objective_and_gradients(net, x, target, loss):
    """Regularized objective (data loss + l2 penalty) and its gradients."""
    value, grad_w, grad_b = data_loss_and_gradients(net, x, target, loss)
    l2 = net.spec.l2_coefficient
    if l2 > 0:
        value += l2_penalty(net)
        for gw, w in zip(grad_w, net.weights):
            gw += 2.0 * l2 * w
    return value, grad_w, grad_b


def _slice_target(target, idx):
    if isinstance(target, tuple):
        return tuple(np.asarray(t)[idx] for t in target)
    return np.asarray(target)[idx]


def sgd_step(net: Network, grad_w, grad_b, learning_rate: float) -> None:
    for w, gw in zip(net.weights, grad_w):
        w -= learning_rate * gw
    for b, gb in zip(net.biases, grad_b):
        b -= learning_rate * gb


def train(net: Network, x, target, loss, cfg: TrainConfig) -> list[float]:
    """Mini-batch SGD on the regularized objective; mutates `net` in place.

    Returns the per-epoch mean objective. Batches are drawn by a seeded
    shuffle each epoch, so identical inputs give bit-identical results.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("training features must be a non-empty (batch, d) matrix")
    if x.shape[1] != net.input_width:
        raise ValueError(f"feature width {x.shape[1]} does not match network ({net.input_width})")
    n = x.shape[0]
    shuffles = Stream(derive_seed(cfg.seed, "epoch-shuffle"))
    trace = []
    for epoch in range(cfg.epochs):
        order = shuffles.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            value, grad_w, grad_b = objective_and_gradients(
                net, x[idx], _slice_target(target, idx), loss
            )
            if not math.isfinite(value):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}"
                )
            sgd_step(net, grad_w, grad_b, cfg.learning_rate)
            epoch_losses.append(value)
        trace.append(float(np.mean(epoch_losses)))
    return trace


# --- serialization ---------------------------------------------------------


def save_network(net: Network, path) -> None:
    """Write a network to an .npz file; round-trips bit-exactly."""
    payload = {
        "format_version": np.asarray([_FORMAT_VERSION], dtype=np.int64),
        "layer_sizes": np.asarray(net.spec.layer_sizes, dtype=np.int64),
        "activations": np.asarray(net.spec.activations),
        "l2_coefficient": np.asarray([net.spec.l2_coefficient]),
        "seed": np.asarray([net.spec.seed], dtype=np.uint64),
    }
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        payload[f"w{i}"] = w
        payload[f"b{i}"] = b
    np.savez(path, **payload)


def load_network(path) -> Network:
    with np.load(path) as data:
        version = int(data["format_version"][0])
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        spec = NetworkSpec(
            layer_sizes=tuple(int(s) for s in data["layer_sizes"]),
            activations=tuple(str(a) for a in data["activations"]),
            l2_coefficient=float(data["l2_coefficient"][0]),
            seed=int(data["seed"][0]),
        )
        weights = [data[f"w{i}"] for i in range(len(spec.layer_sizes) - 1)]
        biases = [data[f"b{i}"] for i in range(len(spec.layer_sizes) - 1)]
    return Network(spec, weights, biases)
