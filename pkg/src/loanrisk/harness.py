"""Experiment driver: train models, build portfolios, optimize, report.

The protocol: train each method on the training split, sample many
equally sized portfolios with replacement from the test split (the same
portfolios for every method, so columns are comparable), optimize each
portfolio's weights against its simulated scenario matrix, then score
every method by the annualized VaR of its pooled realized portfolio
returns computed from true outcomes. Every stage draws its randomness
from a label-derived child of the master seed, so adding or removing a
method never perturbs the others and reports reproduce byte-for-byte.
"""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, denn, risk_opt, survival
from .data import (
    Dataset,
    SynthConfig,
    apply_normalization,
    generate_synthetic,
    load_csv,
    preprocess,
)
from .loan_math import annualized_loss, default_return_batch
from .neural import TrainConfig
from .rng import Stream, derive_seed
from .risk_opt import OptimizerConfig, RiskSpec
from .simulation import simulate

METHODS = ("denn", "dsnn", "snn_only", "equal", "random")
OBJECTIVES = {
    "var95": RiskSpec("var", 0.95),
    "var99": RiskSpec("var", 0.99),
    "cvar95": RiskSpec("cvar", 0.95),
    "cvar99": RiskSpec("cvar", 0.99),
}
MODEL_METHODS = ("denn", "dsnn", "snn_only")

HISTOGRAM_RANGE = (-0.040, 0.015)
HISTOGRAM_BIN_WIDTH = 0.001


@dataclass(frozen=True)
class ExperimentConfig:
    """Full experiment description; exactly one data source must be set."""

    dataset_csv: str | None = None
    synth: SynthConfig | None = None
    methods: tuple[str, ...] = METHODS
    objective: str = "var95"
    portfolio_size: int = 40
    portfolio_count: int = 2000
    scenarios: int = 10000
    confidences: tuple[float, ...] = (0.99, 0.95, 0.90, 0.85, 0.80)
    split_ratios: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0
    out_dir: str | None = None
    # training knobs shared by all neural methods
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 0.01
    l2: float = 1e-4
    # per-portfolio optimizer budget (desk-scale defaults)
    opt_starts: int = 4
    opt_maxiter: int = 60
    opt_prescreen: int = 256

    def __post_init__(self):
        if (self.dataset_csv is None) == (self.synth is None):
            raise ValueError("configure exactly one of dataset_csv or synth")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if not self.methods:
            raise ValueError("need at least one method")
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {sorted(OBJECTIVES)}")
        if self.portfolio_size < 1 or self.portfolio_count < 1 or self.scenarios < 1:
            raise ValueError("portfolio size, count and scenario count must be positive")
        if not all(0.0 < c < 1.0 for c in self.confidences):
            raise ValueError("confidence levels must lie in (0, 1)")


@dataclass
class ExperimentReport:
    methods: tuple[str, ...]
    confidences: tuple[float, ...]
    table: dict[str, list[float]]
    realized: dict[str, np.ndarray]
    metadata: dict
    timings: dict[str, float] = field(default_factory=dict)
    files: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class Histogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    underflow: int
    overflow: int

    @property
    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow


def emit_histogram(
    returns,
    bin_width: float = HISTOGRAM_BIN_WIDTH,
    value_range: tuple[float, float] = HISTOGRAM_RANGE,
) -> Histogram:
    """Fixed-width histogram over a closed range with explicit outliers.

    Bins are right-open; values below the range land in the underflow
    bucket, values at or above its top in the overflow bucket, so counts
    always total the sample size.
    """
    r = np.asarray(returns, dtype=np.float64)
    if r.size == 0:
        raise ValueError("empty sample")
    if bin_width <= 0:
        raise ValueError(f"bin width must be positive, got {bin_width}")
    lo, hi = value_range
    n_bins = max(1, int(round((hi - lo) / bin_width)))
    edges = lo + np.arange(n_bins + 1) * bin_width
    idx = np.floor((r - lo) / bin_width).astype(np.int64)
    underflow = int(np.sum(r < lo))
    overflow = int(np.sum((r >= lo) & (idx >= n_bins)))
    in_range = (idx >= 0) & (idx < n_bins)
    counts = np.bincount(idx[in_range], minlength=n_bins)
    return Histogram(bin_edges=edges, counts=counts, underflow=underflow, overflow=overflow)


def annualized_var_row(realized_returns: np.ndarray, confidences) -> list[float]:
    """Annualized VaR of a realized-return sample at each confidence."""
    return [
        annualized_loss(-risk_opt.var(realized_returns, alpha)) for alpha in confidences
    ]


def _train_config(cfg: ExperimentConfig, label: str) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate,
        epochs=cfg.epochs,
        seed=derive_seed(cfg.seed, label),
    )


def _load_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset_csv is not None:
        return load_csv(cfg.dataset_csv)
    return generate_synthetic(cfg.synth)


def train_models(cfg: ExperimentConfig, dataset: Dataset) -> dict:
    """Fit every model-based method on the training split."""
    train_records = dataset.subset("train")
    models = {}
    if "denn" in cfg.methods:
        models["denn"] = denn.train_denn(
            train_records, _train_config(cfg, "train-denn"), l2=cfg.l2
        ).model
    survival_cfg = _train_config(cfg, "train-survival")
    if "dsnn" in cfg.methods:
        models["dsnn"] = survival.train_dsnn(train_records, survival_cfg, l2=cfg.l2).model
    if "snn_only" in cfg.methods:
        models["snn_only"] = survival.train_snn_only(
            train_records, survival_cfg, l2=cfg.l2
        ).model
    return models


def predict_distribution(method: str, model, record):
    if method == "denn":
        return denn.predict_denn(model, record)
    return survival.predict_dsnn(model, record)


def _realized_loan_returns(records) -> np.ndarray:
    """True observed monthly return per loan: promised rate or default solve."""
    out = np.asarray([r.terms.monthly_rate for r in records])
    defaulted = [i for i, r in enumerate(records) if r.default_flag == 1]
    if defaulted:
        out[defaulted] = default_return_batch(
            np.asarray([records[i].terms.amount for i in defaulted]),
            np.asarray([records[i].terms.installment for i in defaulted]),
            np.asarray([records[i].lifetime for i in defaulted]),
        )
    return out


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Execute the full protocol; writes report files when out_dir is set."""
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    dataset = preprocess(
        _load_dataset(cfg), cfg.split_ratios, seed=derive_seed(cfg.seed, "split")
    )
    timings["data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    models = train_models(cfg, dataset)
    timings["train"] = time.perf_counter() - t0

    test_records = dataset.subset("test")
    n_test = len(test_records)
    n, count, k = cfg.portfolio_size, cfg.portfolio_count, cfg.scenarios
    sampler = Stream(derive_seed(cfg.seed, "portfolio-sampling"))
    portfolios = sampler.integers(count * n, n_test).reshape(count, n)

    realized_by_loan = _realized_loan_returns(test_records)

    spec = OBJECTIVES[cfg.objective]
    realized: dict[str, np.ndarray] = {}
    t0 = time.perf_counter()
    for method in cfg.methods:
        if method == "equal":
            weights_all = np.full((count, n), 1.0 / n)
        elif method == "random":
            draws = Stream(derive_seed(cfg.seed, "random-weights"))
            weights_all = np.stack([draws.dirichlet(n) for _ in range(count)])
        else:
            model = models[method]
            dist_cache = {}
            for loan_index in np.unique(portfolios):
                dist_cache[int(loan_index)] = predict_distribution(
                    method, model, test_records[loan_index]
                )
            weights_all = np.empty((count, n))
            for p in range(count):
                dists = [dist_cache[int(i)] for i in portfolios[p]]
                matrix = simulate(dists, k, seed=derive_seed(cfg.seed, f"simulate-{method}-{p}"))
                solution = risk_opt.minimize_risk(
                    matrix,
                    spec,
                    OptimizerConfig(
                        n_starts=cfg.opt_starts,
                        maxiter=cfg.opt_maxiter,
                        prescreen=cfg.opt_prescreen,
                        polish_steps=(),  # too costly per portfolio at desk scale
                        seed=derive_seed(cfg.seed, f"optimize-{method}-{p}"),
                    ),
                )
                weights_all[p] = solution.weights
        realized[method] = np.einsum(
            "pi,pi->p", weights_all, realized_by_loan[portfolios]
        )
    timings["portfolios"] = time.perf_counter() - t0

    table = {
        method: annualized_var_row(realized[method], cfg.confidences)
        for method in cfg.methods
    }
    metadata = {
        "version": __version__,
        "config": _config_echo(cfg),
        "dataset": {
            "records": len(dataset.records),
            "feature_width": dataset.feature_width,
            "default_rate": float(dataset.events().mean()),
            "splits": {name: len(idx) for name, idx in dataset.split.items()},
        },
        "seed_labels": {
            "split": derive_seed(cfg.seed, "split"),
            "portfolio-sampling": derive_seed(cfg.seed, "portfolio-sampling"),
        },
    }
    report = ExperimentReport(
        methods=cfg.methods,
        confidences=cfg.confidences,
        table=table,
        realized=realized,
        metadata=metadata,
        timings=timings,
    )
    if cfg.out_dir is not None:
        report.files = write_report(report, cfg.out_dir)
    return report


def _config_echo(cfg: ExperimentConfig) -> dict:
    echo = dataclasses.asdict(cfg)
    if cfg.synth is not None:
        echo["synth"] = dataclasses.asdict(cfg.synth)
    return echo


# --- report files ------------------------------------------------------------


def write_report(report: ExperimentReport, out_dir) -> list[str]:
    """Write tables, histograms, samples and metadata; returns file paths.

    Everything except timings.txt is a pure function of (config, seed,
    dataset), so reruns reproduce those files byte-for-byte.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    table_path = out / "report.tsv"
    header = "method\t" + "\t".join(f"{c:g}" for c in report.confidences)
    lines = [header]
    for method in report.methods:
        cells = "\t".join(f"{v:.4f}" for v in report.table[method])
        lines.append(f"{method}\t{cells}")
    table_path.write_text("\n".join(lines) + "\n")
    written.append(str(table_path))

    sample_path = out / "realized_returns.tsv"
    rows = ["\t".join(report.methods)]
    stacked = np.stack([report.realized[m] for m in report.methods], axis=1)
    for row in stacked:
        rows.append("\t".join(repr(float(v)) for v in row))
    sample_path.write_text("\n".join(rows) + "\n")
    written.append(str(sample_path))

    for method in report.methods:
        hist = emit_histogram(report.realized[method])
        path = out / f"histogram_{method}.csv"
        write_histogram_csv(hist, path)
        written.append(str(path))

    meta_path = out / "run_meta.json"
    meta_path.write_text(json.dumps(report.metadata, indent=2, sort_keys=True) + "\n")
    written.append(str(meta_path))

    if report.timings:
        timing_path = out / "timings.txt"
        timing_path.write_text(
            "".join(f"{stage}\t{seconds:.3f}\n" for stage, seconds in report.timings.items())
        )
    return written


def write_histogram_csv(hist: Histogram, path) -> None:
    lines = ["bin_start,bin_end,count"]
    lines.append(f"-inf,{hist.bin_edges[0]!r},{hist.underflow}")
    for i in range(hist.counts.size):
        lines.append(f"{hist.bin_edges[i]!r},{hist.bin_edges[i + 1]!r},{hist.counts[i]}")
    lines.append(f"{hist.bin_edges[-1]!r},inf,{hist.overflow}")
    Path(path).write_text("\n".join(lines) + "\n")


def rebuild_report(run_dir) -> ExperimentReport:
    """Reconstruct tables and histograms from a saved run directory."""
    run = Path(run_dir)
    metadata = json.loads((run / "run_meta.json").read_text())
    lines = (run / "realized_returns.tsv").read_text().splitlines()
    methods = tuple(lines[0].split("\t"))
    values = np.asarray([[float(v) for v in line.split("\t")] for line in lines[1:]])
    confidences = tuple(metadata["config"]["confidences"])
    realized = {m: values[:, j] for j, m in enumerate(methods)}
    table = {m: annualized_var_row(realized[m], confidences) for m in methods}
    return ExperimentReport(
        methods=methods,
        confidences=confidences,
        table=table,
        realized=realized,
        metadata=metadata,
    )


# --- config file -------------------------------------------------------------


def parse_config_text(text: str) -> dict[str, str]:
    """Flat `key = value` lines; blank lines and # comments ignored."""
    mapping = {}
    for line_number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line {line_number}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        mapping[key.strip()] = value.strip()
    return mapping


def _floats(value: str) -> tuple[float, ...]:
    return tuple(float(v) for v in value.split(","))


def experiment_config_from_mapping(mapping: dict[str, str]) -> ExperimentConfig:
    """Build an ExperimentConfig from flat config keys."""
    mapping = dict(mapping)
    seed = int(mapping.pop("seed", 0))
    synth = None
    dataset_csv = mapping.pop("dataset_csv", None)
    synth_keys = {k for k in mapping if k.startswith("synth_")}
    if dataset_csv is None:
        synth = SynthConfig(
            n_loans=int(mapping.pop("synth_n_loans", 20000)),
            feature_width=int(mapping.pop("synth_feature_width", 16)),
            term_months=int(mapping.pop("synth_term_months", 36)),
            weibull_scale=float(mapping.pop("synth_weibull_scale", 0.035)),
            weibull_shape=float(mapping.pop("synth_weibull_shape", 1.3)),
            intercept=float(mapping.pop("synth_intercept", -1.6)),
            rate_range=(
                float(mapping.pop("synth_rate_lo", 0.004)),
                float(mapping.pop("synth_rate_hi", 0.015)),
            ),
            amount_range=(
                float(mapping.pop("synth_amount_lo", 1000.0)),
                float(mapping.pop("synth_amount_hi", 40000.0)),
            ),
            seed=int(mapping.pop("synth_seed", derive_seed(seed, "synthetic-data"))),
        )
    elif synth_keys:
        raise ValueError(f"dataset_csv set; synthetic keys are not allowed: {sorted(synth_keys)}")

    kwargs = dict(dataset_csv=dataset_csv, synth=synth, seed=seed)
    if "methods" in mapping:
        kwargs["methods"] = tuple(m.strip() for m in mapping.pop("methods").split(","))
    if "objective" in mapping:
        kwargs["objective"] = mapping.pop("objective")
    if "confidences" in mapping:
        kwargs["confidences"] = _floats(mapping.pop("confidences"))
    if "split" in mapping:
        kwargs["split_ratios"] = _floats(mapping.pop("split"))
    if "out_dir" in mapping:
        kwargs["out_dir"] = mapping.pop("out_dir")
    for key, caster in [
        ("portfolio_size", int),
        ("portfolio_count", int),
        ("scenarios", int),
        ("epochs", int),
        ("batch_size", int),
        ("opt_starts", int),
        ("opt_maxiter", int),
        ("opt_prescreen", int),
        ("learning_rate", float),
        ("l2", float),
    ]:
        if key in mapping:
            kwargs[key] = caster(mapping.pop(key))
    if mapping:
        raise ValueError(f"unknown config keys: {sorted(mapping)}")
    return ExperimentConfig(**kwargs)


def load_experiment_config(path, overrides: dict[str, str] | None = None) -> ExperimentConfig:
    mapping = parse_config_text(Path(path).read_text()) if path else {}
    mapping.update(overrides or {})
    return experiment_config_from_mapping(mapping)


# --- single-step helpers used by the service and CLI -------------------------


def train_and_save(
    cfg: ExperimentConfig, method: str, model_dir
) -> dict:
    """Train one method on the configured dataset and persist it."""
    if method not in MODEL_METHODS:
        raise ValueError(f"method must be one of {MODEL_METHODS}, got {method!r}")
    dataset = preprocess(
        _load_dataset(cfg), cfg.split_ratios, seed=derive_seed(cfg.seed, "split")
    )
    train_records = dataset.subset("train")
    model_dir = Path(model_dir)
    model_dir.mkdir(parents=True, exist_ok=True)
    if method == "denn":
        result = denn.train_denn(train_records, _train_config(cfg, "train-denn"), l2=cfg.l2)
        denn.save_denn(result.model, model_dir)
        final_losses = {
            "default_rate": result.default_rate_trace[-1] if result.default_rate_trace else None,
            "lifetime": result.lifetime_trace[-1] if result.lifetime_trace else None,
        }
    elif method == "dsnn":
        result = survival.train_dsnn(train_records, _train_config(cfg, "train-survival"), l2=cfg.l2)
        survival.save_survival_model(result.model, model_dir)
        final_losses = result.final
    else:
        result = survival.train_snn_only(
            train_records, _train_config(cfg, "train-survival"), l2=cfg.l2
        )
        survival.save_survival_model(result.model, model_dir)
        final_losses = {"snn": result.trace[-1] if result.trace else None}
    np.savez(
        model_dir / "normalization.npz", mean=dataset.norm_mean, std=dataset.norm_std
    )
    (model_dir / "training_meta.json").write_text(
        json.dumps(
            {"method": method, "seed": cfg.seed, "feature_width": dataset.feature_width},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return {"model_dir": str(model_dir), "method": method, "final_losses": final_losses}


def load_model_dir(model_dir):
    """Load a persisted model directory; returns (method, model, mean, std)."""
    model_dir = Path(model_dir)
    meta = json.loads((model_dir / "training_meta.json").read_text())
    method = meta["method"]
    if method == "denn":
        model = denn.load_denn(model_dir)
    else:
        model = survival.load_survival_model(model_dir)
    with np.load(model_dir / "normalization.npz") as stats:
        mean, std = stats["mean"], stats["std"]
    return method, model, mean, std


def optimize_portfolio(
    model_dir,
    dataset_csv,
    loan_ids,
    objective: str = "var95",
    scenarios: int = 10000,
    seed: int = 0,
    opt_starts: int = 10,
    opt_maxiter: int = 200,
) -> dict:
    """Optimize one portfolio's weights with a persisted model."""
    method, model, mean, std = load_model_dir(model_dir)
    dataset = load_csv(dataset_csv)
    by_id = {r.loan_id: r for r in dataset.records}
    missing = [i for i in loan_ids if i not in by_id]
    if missing:
        raise ValueError(f"loan ids not in dataset: {missing}")
    dists = []
    for loan_id in loan_ids:
        record = by_id[loan_id]
        normalized = dataclasses.replace(
            record, features=apply_normalization(record.features, mean, std)
        )
        dists.append(predict_distribution(method, model, normalized))
    matrix = simulate(dists, scenarios, seed=derive_seed(seed, "simulate"))
    solution = risk_opt.minimize_risk(
        matrix,
        OBJECTIVES[objective],
        OptimizerConfig(
            n_starts=opt_starts, maxiter=opt_maxiter, seed=derive_seed(seed, "optimize")
        ),
    )
    return {
        "loan_ids": list(loan_ids),
        "weights": [float(w) for w in solution.weights],
        "objective": objective,
        "objective_value": solution.objective,
        "annualized_objective_value": 12.0 * solution.objective,
        "evaluations": solution.evaluations,
        "start_index": solution.start_index,
    }
