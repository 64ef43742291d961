"""Pydantic request/response models for the risk-engine service."""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class SynthParams(BaseModel):
    """Synthetic-dataset knobs; mirrors the generator configuration."""

    n_loans: int = 20000
    feature_width: int = 16
    term_months: int = 36
    weibull_scale: float = 0.035
    weibull_shape: float = 1.3
    intercept: float = -1.6
    rate_lo: float = 0.004
    rate_hi: float = 0.015
    amount_lo: float = 1000.0
    amount_hi: float = 40000.0
    seed: int = 0


class GenerateRequest(BaseModel):
    out_path: str
    synth: SynthParams = Field(default_factory=SynthParams)


class GenerateResponse(BaseModel):
    path: str
    truth_path: str
    records: int
    default_rate: float


class TrainRequest(BaseModel):
    method: str
    model_dir: str
    dataset_csv: str | None = None
    synth: SynthParams | None = None
    seed: int = 0
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 0.01
    l2: float = 1e-4
    split: tuple[float, float, float] = (0.70, 0.15, 0.15)


class TrainResponse(BaseModel):
    model_dir: str
    method: str
    final_losses: dict


class OptimizeRequest(BaseModel):
    model_dir: str
    dataset_csv: str
    loan_ids: list[int]
    objective: str = "var95"
    scenarios: int = 10000
    seed: int = 0
    opt_starts: int = 10
    opt_maxiter: int = 200


class OptimizeResponse(BaseModel):
    loan_ids: list[int]
    weights: list[float]
    objective: str
    objective_value: float
    annualized_objective_value: float
    evaluations: int
    start_index: int


class ExperimentRequest(BaseModel):
    out_dir: str
    dataset_csv: str | None = None
    synth: SynthParams | None = None
    methods: list[str] = ["denn", "dsnn", "snn_only", "equal", "random"]
    objective: str = "var95"
    portfolio_size: int = 40
    portfolio_count: int = 2000
    scenarios: int = 10000
    confidences: list[float] = [0.99, 0.95, 0.90, 0.85, 0.80]
    split: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0
    epochs: int = 50
    batch_size: int = 256
    learning_rate: float = 0.01
    l2: float = 1e-4
    opt_starts: int = 4
    opt_maxiter: int = 60


class ReportTable(BaseModel):
    methods: list[str]
    confidences: list[float]
    annualized_var: dict[str, list[float]]


class ExperimentResponse(BaseModel):
    out_dir: str
    files: list[str]
    table: ReportTable
    timings: dict[str, float]


class ReportRequest(BaseModel):
    run_dir: str


class ReportResponse(BaseModel):
    run_dir: str
    files: list[str]
    table: ReportTable
