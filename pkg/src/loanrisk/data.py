"""Loan-record ingestion, preprocessing and synthetic data generation.

CSV schema: header row with columns
``id, f_0..f_{d-1}, amount, installment, term, rate, lifetime, default``.
Floats are written with repr so a write-then-load round trip reproduces
records exactly. A synthetic dataset persists its generating truth
(default-propensity coefficients and lifetime-distribution parameters) in
a key-value sidecar next to the CSV, so learned models can be scored
against known ground truth.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .loan_math import LoanTerms, installment_for, terms_consistency_gap
from .rng import Stream

logger = logging.getLogger(__name__)

_TERMS_GAP_TOL = 1e-6
SPLIT_NAMES = ("train", "validation", "test")


@dataclass
class LoanRecord:
    """One loan: features, contractual terms and observed outcome.

    A defaulted loan's lifetime counts the installments actually paid and
    is strictly below the term; a fully repaid loan's lifetime equals it.
    """

    loan_id: int
    features: np.ndarray
    terms: LoanTerms
    lifetime: int
    default_flag: int
    grade: str | None = None

    def __post_init__(self):
        if self.default_flag not in (0, 1):
            raise ValueError(f"default flag must be 0 or 1, got {self.default_flag}")
        if self.default_flag == 1 and not 0 <= self.lifetime < self.terms.term_months:
            raise ValueError(
                f"defaulted loan lifetime must lie in [0, {self.terms.term_months}), "
                f"got {self.lifetime}"
            )
        if self.default_flag == 0 and self.lifetime != self.terms.term_months:
            raise ValueError(
                f"non-defaulted loan lifetime must equal the term "
                f"{self.terms.term_months}, got {self.lifetime}"
            )


@dataclass
class Dataset:
    """Loan records plus (after preprocessing) split assignment and stats."""

    records: list[LoanRecord]
    split: dict[str, np.ndarray] | None = None
    norm_mean: np.ndarray | None = None
    norm_std: np.ndarray | None = None
    ground_truth: dict | None = None

    @property
    def feature_width(self) -> int:
        return int(self.records[0].features.shape[0]) if self.records else 0

    def subset(self, name: str) -> list[LoanRecord]:
        if self.split is None:
            raise ValueError("dataset has no split; call preprocess first")
        return [self.records[i] for i in self.split[name]]

    def features(self, name: str | None = None) -> np.ndarray:
        records = self.records if name is None else self.subset(name)
        return np.stack([r.features for r in records])

    def lifetimes(self, name: str | None = None) -> np.ndarray:
        records = self.records if name is None else self.subset(name)
        return np.asarray([float(r.lifetime) for r in records])

    def events(self, name: str | None = None) -> np.ndarray:
        records = self.records if name is None else self.subset(name)
        return np.asarray([float(r.default_flag) for r in records])


def _expected_header(width: int) -> list[str]:
    return (
        ["id"]
        + [f"f_{i}" for i in range(width)]
        + ["amount", "installment", "term", "rate", "lifetime", "default"]
    )


def load_csv(path) -> Dataset:
    """Parse a loan CSV; inconsistent outcome rows are dropped with a warning."""
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        width = sum(1 for name in header if name.startswith("f_"))
        if header != _expected_header(width):
            raise ValueError(
                f"{path}: header {header[:3]}...{header[-3:]} does not match the "
                f"loan schema (id, f_0..f_{{d-1}}, amount, installment, term, rate, "
                f"lifetime, default)"
            )
        records = []
        rejected = 0
        for row_number, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValueError(f"{path}:{row_number}: expected {len(header)} cells")
            try:
                loan_id = int(row[0])
                features = np.asarray([float(cell) for cell in row[1 : 1 + width]])
                terms = LoanTerms(
                    amount=float(row[1 + width]),
                    installment=float(row[2 + width]),
                    term_months=int(row[3 + width]),
                    monthly_rate=float(row[4 + width]),
                )
                lifetime = int(row[5 + width])
                default_flag = int(row[6 + width])
            except ValueError as exc:
                raise ValueError(f"{path}:{row_number}: {exc}") from None
            try:
                record = LoanRecord(loan_id, features, terms, lifetime, default_flag)
            except ValueError as exc:
                rejected += 1
                logger.warning("%s:%d: rejected row: %s", path, row_number, exc)
                continue
            gap = terms_consistency_gap(terms)
            if gap > _TERMS_GAP_TOL:
                logger.warning(
                    "%s:%d: installment inconsistent with amount/term/rate "
                    "(relative gap %.2e)",
                    path,
                    row_number,
                    gap,
                )
            records.append(record)
    if rejected:
        logger.warning("%s: rejected %d inconsistent rows", path, rejected)
    return Dataset(records=records, ground_truth=_load_truth_sidecar(path))


def save_csv(dataset: Dataset, path) -> None:
    width = dataset.feature_width
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(_expected_header(width))
        for r in dataset.records:
            writer.writerow(
                [r.loan_id]
                + [repr(float(v)) for v in r.features]
                + [
                    repr(float(r.terms.amount)),
                    repr(float(r.terms.installment)),
                    r.terms.term_months,
                    repr(float(r.terms.monthly_rate)),
                    r.lifetime,
                    r.default_flag,
                ]
            )
    if dataset.ground_truth is not None:
        _save_truth_sidecar(dataset.ground_truth, path)


def _truth_path(csv_path) -> str:
    return f"{csv_path}.truth"


def _save_truth_sidecar(truth: dict, csv_path) -> None:
    lines = []
    for key, value in truth.items():
        if isinstance(value, (list, tuple, np.ndarray)):
            rendered = ",".join(repr(float(v)) for v in value)
        else:
            rendered = repr(value)
        lines.append(f"{key} = {rendered}")
    with open(_truth_path(csv_path), "w") as handle:
        handle.write("\n".join(lines) + "\n")


def _load_truth_sidecar(csv_path) -> dict | None:
    try:
        with open(_truth_path(csv_path)) as handle:
            text = handle.read()
    except OSError:
        return None
    truth = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if "," in value:
            truth[key] = [float(v) for v in value.split(",")]
        else:
            try:
                truth[key] = int(value)
            except ValueError:
                truth[key] = float(value)
    return truth


def preprocess(dataset: Dataset, split_ratios=(0.7, 0.15, 0.15), seed: int = 0) -> Dataset:
    """Seeded random split plus feature standardization on training stats.

    Features become zero mean and unit variance as measured on the
    training split only; a feature constant on the training split is
    mapped to 0 everywhere.
    """
    if not dataset.records:
        raise ValueError("cannot preprocess an empty dataset")
    ratios = np.asarray(split_ratios, dtype=np.float64)
    if ratios.shape != (3,) or np.any(ratios <= 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError(f"split ratios must be three positives summing to 1, got {split_ratios}")
    n = len(dataset.records)
    order = Stream(seed).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    split = {
        "train": np.sort(order[:n_train]),
        "validation": np.sort(order[n_train : n_train + n_val]),
        "test": np.sort(order[n_train + n_val :]),
    }

    x = dataset.features()
    train_x = x[split["train"]]
    mean = train_x.mean(axis=0)
    std = train_x.std(axis=0)
    constant = std == 0
    scale = np.where(constant, 1.0, std)
    normalized = (x - mean) / scale
    normalized[:, constant] = 0.0

    records = [
        replace(record, features=normalized[i].copy())
        for i, record in enumerate(dataset.records)
    ]
    return Dataset(
        records=records,
        split=split,
        norm_mean=mean,
        norm_std=std,
        ground_truth=dataset.ground_truth,
    )


def apply_normalization(features: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Standardize raw features with stored training statistics."""
    constant = std == 0
    scale = np.where(constant, 1.0, std)
    out = (np.asarray(features, dtype=np.float64) - mean) / scale
    out[..., constant] = 0.0
    return out


@dataclass(frozen=True)
class SynthConfig:
    """Ground-truth parameters for the synthetic loan generator."""

    n_loans: int = 20000
    feature_width: int = 16
    term_months: int = 36
    weibull_scale: float = 0.035
    weibull_shape: float = 1.3
    propensity: tuple[float, ...] | None = None  # None: built-in decaying pattern
    intercept: float = -1.6
    rate_range: tuple[float, float] = (0.004, 0.015)
    amount_range: tuple[float, float] = (1000.0, 40000.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_loans < 1 or self.feature_width < 1 or self.term_months < 2:
            raise ValueError("need n_loans >= 1, feature_width >= 1, term_months >= 2")
        if self.weibull_scale <= 0 or self.weibull_shape <= 0:
            raise ValueError("lifetime distribution parameters must be positive")
        if self.propensity is not None and len(self.propensity) != self.feature_width:
            raise ValueError("propensity coefficient count must equal the feature width")
        if not self.rate_range[0] <= self.rate_range[1] or self.rate_range[0] <= -1:
            raise ValueError(f"invalid rate range {self.rate_range}")
        if not 0 < self.amount_range[0] <= self.amount_range[1]:
            raise ValueError(f"invalid amount range {self.amount_range}")


def default_propensity(cfg: SynthConfig) -> np.ndarray:
    if cfg.propensity is not None:
        return np.asarray(cfg.propensity, dtype=np.float64)
    coefficients = np.zeros(cfg.feature_width)
    active = min(cfg.feature_width, 8)
    coefficients[:active] = (-0.55) ** np.arange(active)
    return coefficients


def truncated_weibull_months(u: np.ndarray, scale: float, shape: float, term: int) -> np.ndarray:
    """Map uniforms to whole months from a Weibull conditioned below the term."""
    cdf_at_term = -np.expm1(-((scale * term) ** shape))
    t = (1.0 / scale) * (-np.log1p(-u * cdf_at_term)) ** (1.0 / shape)
    return np.floor(t).astype(np.int64)


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Seeded synthetic loans with persisted generating truth.

    Default probability is logistic in the features; defaulted lifetimes
    follow the configured Weibull truncated below the term; installments
    are derived from (amount, term, rate) so every record's terms are
    self-consistent.
    """
    root = Stream(cfg.seed)
    features = root.child("features").normals(cfg.n_loans * cfg.feature_width)
    features = features.reshape(cfg.n_loans, cfg.feature_width)
    coefficients = default_propensity(cfg)
    scores = features @ coefficients + cfg.intercept
    p_default = expit(scores)
    defaults = (root.child("default-draw").uniforms(cfg.n_loans) < p_default).astype(np.int64)

    lifetimes = np.full(cfg.n_loans, cfg.term_months, dtype=np.int64)
    default_idx = np.flatnonzero(defaults == 1)
    u = root.child("lifetime").uniforms(default_idx.size)
    lifetimes[default_idx] = truncated_weibull_months(
        u, cfg.weibull_scale, cfg.weibull_shape, cfg.term_months
    )

    lo, hi = cfg.rate_range
    rates = lo + (hi - lo) * root.child("rate").uniforms(cfg.n_loans)
    a_lo, a_hi = cfg.amount_range
    amounts = np.round(a_lo + (a_hi - a_lo) * root.child("amount").uniforms(cfg.n_loans))

    records = []
    for i in range(cfg.n_loans):
        terms = LoanTerms(
            amount=float(amounts[i]),
            installment=installment_for(float(amounts[i]), float(rates[i]), cfg.term_months),
            term_months=cfg.term_months,
            monthly_rate=float(rates[i]),
        )
        records.append(
            LoanRecord(
                loan_id=i,
                features=features[i].copy(),
                terms=terms,
                lifetime=int(lifetimes[i]),
                default_flag=int(defaults[i]),
            )
        )
    truth = {
        "weibull_scale": cfg.weibull_scale,
        "weibull_shape": cfg.weibull_shape,
        "intercept": cfg.intercept,
        "coefficients": coefficients.tolist(),
        "seed": cfg.seed,
    }
    return Dataset(records=records, ground_truth=truth)
