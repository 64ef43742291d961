"""FastAPI application exposing the risk engine.

Requests carry filesystem paths; the service reads and writes datasets,
model directories and run directories on its own host, which is the
intended deployment for a desk tool. Validation failures and bad paths
surface as 400 responses with the underlying message.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from .. import __version__, harness
from ..data import SynthConfig, generate_synthetic, save_csv
from ..harness import ExperimentConfig
from . import schemas


def _synth_config(params: schemas.SynthParams) -> SynthConfig:
    return SynthConfig(
        n_loans=params.n_loans,
        feature_width=params.feature_width,
        term_months=params.term_months,
        weibull_scale=params.weibull_scale,
        weibull_shape=params.weibull_shape,
        intercept=params.intercept,
        rate_range=(params.rate_lo, params.rate_hi),
        amount_range=(params.amount_lo, params.amount_hi),
        seed=params.seed,
    )


def _experiment_config(req: schemas.ExperimentRequest) -> ExperimentConfig:
    return ExperimentConfig(
        dataset_csv=req.dataset_csv,
        synth=_synth_config(req.synth) if req.synth is not None else None,
        methods=tuple(req.methods),
        objective=req.objective,
        portfolio_size=req.portfolio_size,
        portfolio_count=req.portfolio_count,
        scenarios=req.scenarios,
        confidences=tuple(req.confidences),
        split_ratios=req.split,
        seed=req.seed,
        out_dir=req.out_dir,
        epochs=req.epochs,
        batch_size=req.batch_size,
        learning_rate=req.learning_rate,
        l2=req.l2,
        opt_starts=req.opt_starts,
        opt_maxiter=req.opt_maxiter,
    )


def _table(report) -> schemas.ReportTable:
    return schemas.ReportTable(
        methods=list(report.methods),
        confidences=list(report.confidences),
        annualized_var=report.table,
    )


def create_app() -> FastAPI:
    app = FastAPI(title="loanrisk", version=__version__)

    @app.exception_handler(ValueError)
    async def _value_error(request, exc: ValueError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/datasets/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest):
        dataset = generate_synthetic(_synth_config(req.synth))
        save_csv(dataset, req.out_path)
        return schemas.GenerateResponse(
            path=req.out_path,
            truth_path=f"{req.out_path}.truth",
            records=len(dataset.records),
            default_rate=float(dataset.events().mean()),
        )

    @app.post("/models/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        if (req.dataset_csv is None) == (req.synth is None):
            raise HTTPException(400, "provide exactly one of dataset_csv or synth")
        cfg = ExperimentConfig(
            dataset_csv=req.dataset_csv,
            synth=_synth_config(req.synth) if req.synth is not None else None,
            methods=(req.method,),
            split_ratios=req.split,
            seed=req.seed,
            epochs=req.epochs,
            batch_size=req.batch_size,
            learning_rate=req.learning_rate,
            l2=req.l2,
        )
        try:
            result = harness.train_and_save(cfg, req.method, req.model_dir)
        except OSError as exc:
            raise HTTPException(400, str(exc)) from exc
        return schemas.TrainResponse(**result)

    @app.post("/portfolios/optimize", response_model=schemas.OptimizeResponse)
    def optimize(req: schemas.OptimizeRequest):
        try:
            result = harness.optimize_portfolio(
                req.model_dir,
                req.dataset_csv,
                req.loan_ids,
                objective=req.objective,
                scenarios=req.scenarios,
                seed=req.seed,
                opt_starts=req.opt_starts,
                opt_maxiter=req.opt_maxiter,
            )
        except OSError as exc:
            raise HTTPException(400, str(exc)) from exc
        return schemas.OptimizeResponse(**result)

    @app.post("/experiments/run", response_model=schemas.ExperimentResponse)
    def experiment(req: schemas.ExperimentRequest):
        cfg = _experiment_config(req)
        try:
            report = harness.run_experiment(cfg)
        except OSError as exc:
            raise HTTPException(400, str(exc)) from exc
        return schemas.ExperimentResponse(
            out_dir=req.out_dir,
            files=report.files,
            table=_table(report),
            timings=report.timings,
        )

    @app.post("/reports/render", response_model=schemas.ReportResponse)
    def render(req: schemas.ReportRequest):
        try:
            report = harness.rebuild_report(req.run_dir)
        except OSError as exc:
            raise HTTPException(400, str(exc)) from exc
        files = harness.write_report(report, req.run_dir)
        return schemas.ReportResponse(run_dir=req.run_dir, files=files, table=_table(report))

    return app


app = create_app()
