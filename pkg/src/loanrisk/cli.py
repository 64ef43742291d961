"""Command-line client for the risk-engine service.

Every subcommand builds an HTTP request against the service API. By
default the app runs in-process over an ASGI transport (no socket, same
wire format); pass --server to target a running instance instead. The
`serve` subcommand starts one.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx

from .harness import load_experiment_config, parse_config_text


def _post(args, path: str, payload: dict) -> dict:
    async def call():
        if args.server:
            transport = None
            base_url = args.server.rstrip("/")
        else:
            from .service.app import app

            transport = httpx.ASGITransport(app=app)
            base_url = "http://loanrisk.local"
        async with httpx.AsyncClient(
            transport=transport, base_url=base_url, timeout=None
        ) as client:
            response = await client.post(path, json=payload)
        if response.status_code != 200:
            try:
                detail = response.json().get("detail", response.text)
            except ValueError:
                detail = response.text
            raise SystemExit(f"error {response.status_code}: {detail}")
        return response.json()

    return asyncio.run(call())


def _config_mapping(args) -> dict:
    mapping = {}
    if getattr(args, "config", None):
        with open(args.config) as handle:
            mapping = parse_config_text(handle.read())
    return mapping


def _synth_payload(mapping: dict, seed: int) -> dict:
    keys = {
        "synth_n_loans": ("n_loans", int),
        "synth_feature_width": ("feature_width", int),
        "synth_term_months": ("term_months", int),
        "synth_weibull_scale": ("weibull_scale", float),
        "synth_weibull_shape": ("weibull_shape", float),
        "synth_intercept": ("intercept", float),
        "synth_rate_lo": ("rate_lo", float),
        "synth_rate_hi": ("rate_hi", float),
        "synth_amount_lo": ("amount_lo", float),
        "synth_amount_hi": ("amount_hi", float),
        "synth_seed": ("seed", int),
    }
    synth = {"seed": seed}
    for key, (field, cast) in keys.items():
        if key in mapping:
            synth[field] = cast(mapping[key])
    return synth


def cmd_generate(args) -> None:
    mapping = _config_mapping(args)
    payload = {
        "out_path": args.out,
        "synth": _synth_payload(mapping, args.seed),
    }
    result = _post(args, "/datasets/generate", payload)
    print(json.dumps(result, indent=2))


def cmd_train(args) -> None:
    mapping = _config_mapping(args)
    payload = {
        "method": args.method,
        "model_dir": args.out,
        "seed": args.seed,
    }
    if args.data:
        payload["dataset_csv"] = args.data
    elif mapping.get("dataset_csv"):
        payload["dataset_csv"] = mapping["dataset_csv"]
    else:
        payload["synth"] = _synth_payload(mapping, args.seed)
    for key in ("epochs", "batch_size"):
        if key in mapping:
            payload[key] = int(mapping[key])
    for key in ("learning_rate", "l2"):
        if key in mapping:
            payload[key] = float(mapping[key])
    result = _post(args, "/models/train", payload)
    print(json.dumps(result, indent=2))


def cmd_optimize(args) -> None:
    payload = {
        "model_dir": args.model,
        "dataset_csv": args.data,
        "loan_ids": [int(v) for v in args.loans.split(",")],
        "objective": args.objective,
        "scenarios": args.scenarios,
        "seed": args.seed,
    }
    result = _post(args, "/portfolios/optimize", payload)
    print(json.dumps(result, indent=2))


def _print_table(table: dict) -> None:
    confidences = table["confidences"]
    print("method\t" + "\t".join(f"{c:g}" for c in confidences))
    for method in table["methods"]:
        row = table["annualized_var"][method]
        print(method + "\t" + "\t".join(f"{v:.4f}" for v in row))


def cmd_experiment(args) -> None:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.objective:
        overrides["objective"] = args.objective
    if args.methods:
        overrides["methods"] = args.methods
    if args.out:
        overrides["out_dir"] = args.out
    cfg = load_experiment_config(args.config, overrides)
    if cfg.out_dir is None:
        raise SystemExit("an output directory is required (--out or out_dir in the config)")
    payload = {
        "out_dir": cfg.out_dir,
        "dataset_csv": cfg.dataset_csv,
        "methods": list(cfg.methods),
        "objective": cfg.objective,
        "portfolio_size": cfg.portfolio_size,
        "portfolio_count": cfg.portfolio_count,
        "scenarios": cfg.scenarios,
        "confidences": list(cfg.confidences),
        "split": list(cfg.split_ratios),
        "seed": cfg.seed,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "l2": cfg.l2,
        "opt_starts": cfg.opt_starts,
        "opt_maxiter": cfg.opt_maxiter,
    }
    if cfg.synth is not None:
        payload["synth"] = {
            "n_loans": cfg.synth.n_loans,
            "feature_width": cfg.synth.feature_width,
            "term_months": cfg.synth.term_months,
            "weibull_scale": cfg.synth.weibull_scale,
            "weibull_shape": cfg.synth.weibull_shape,
            "intercept": cfg.synth.intercept,
            "rate_lo": cfg.synth.rate_range[0],
            "rate_hi": cfg.synth.rate_range[1],
            "amount_lo": cfg.synth.amount_range[0],
            "amount_hi": cfg.synth.amount_range[1],
            "seed": cfg.synth.seed,
        }
    result = _post(args, "/experiments/run", payload)
    _print_table(result["table"])
    print("files:")
    for path in result["files"]:
        print(f"  {path}")


def cmd_report(args) -> None:
    result = _post(args, "/reports/render", {"run_dir": args.run})
    _print_table(result["table"])


def cmd_serve(args) -> None:
    import uvicorn

    uvicorn.run("loanrisk.service.app:app", host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loanrisk", description=__doc__)
    parser.add_argument(
        "--server", default=None, help="base URL of a running service (default: in-process)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic loan dataset")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--config", default=None, help="key=value config file with synth_* keys")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit one model and persist it")
    p.add_argument("--method", required=True, choices=["denn", "dsnn", "snn_only"])
    p.add_argument("--out", required=True, help="model output directory")
    p.add_argument("--data", default=None, help="loan CSV (default: synthetic from config)")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("optimize", help="optimal weights for one loan list")
    p.add_argument("--model", required=True, help="trained model directory")
    p.add_argument("--data", required=True, help="loan CSV containing the ids")
    p.add_argument("--loans", required=True, help="comma-separated loan ids")
    p.add_argument(
        "--objective", default="var95", choices=["var95", "var99", "cvar95", "cvar99"]
    )
    p.add_argument("--scenarios", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("experiment", help="run the full portfolio experiment")
    p.add_argument("--config", default=None, help="key=value experiment config file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument(
        "--objective", default=None, choices=["var95", "var99", "cvar95", "cvar99"]
    )
    p.add_argument("--methods", default=None, help="comma-separated method list")
    p.add_argument("--out", default=None, help="run output directory")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="regenerate tables/histograms from a saved run")
    p.add_argument("--run", required=True, help="run directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> None:
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main(sys.argv[1:])
