import numpy as np
import pytest
from fastapi.testclient import TestClient

from loanrisk.service.app import create_app


@pytest.fixture(scope="module")
def client():
    return TestClient(create_app())


@pytest.fixture(scope="module")
def dataset_path(client, tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "loans.csv"
    response = client.post(
        "/datasets/generate",
        json={"out_path": str(path), "synth": {"n_loans": 400, "feature_width": 4, "seed": 2}},
    )
    assert response.status_code == 200
    return str(path)


def test_health(client):
    body = client.get("/health").json()
    assert body["status"] == "ok"


def test_generate_reports_dataset_stats(client, tmp_path):
    path = tmp_path / "loans.csv"
    response = client.post(
        "/datasets/generate",
        json={"out_path": str(path), "synth": {"n_loans": 120, "feature_width": 4, "seed": 1}},
    )
    body = response.json()
    assert response.status_code == 200
    assert body["records"] == 120
    assert 0.0 < body["default_rate"] < 1.0
    assert path.exists()
    assert (tmp_path / "loans.csv.truth").exists()


def test_generate_validates_params(client, tmp_path):
    response = client.post(
        "/datasets/generate",
        json={"out_path": str(tmp_path / "x.csv"), "synth": {"n_loans": 0}},
    )
    assert response.status_code == 400


def test_train_then_optimize(client, dataset_path, tmp_path_factory):
    model_dir = tmp_path_factory.mktemp("models") / "denn"
    response = client.post(
        "/models/train",
        json={
            "method": "denn",
            "model_dir": str(model_dir),
            "dataset_csv": dataset_path,
            "epochs": 2,
            "seed": 5,
        },
    )
    assert response.status_code == 200
    assert response.json()["method"] == "denn"

    response = client.post(
        "/portfolios/optimize",
        json={
            "model_dir": str(model_dir),
            "dataset_csv": dataset_path,
            "loan_ids": [0, 1, 2],
            "scenarios": 150,
            "opt_starts": 2,
            "opt_maxiter": 20,
        },
    )
    assert response.status_code == 200
    weights = response.json()["weights"]
    assert len(weights) == 3
    assert abs(sum(weights) - 1.0) < 1e-9


def test_train_requires_one_source(client, tmp_path):
    response = client.post(
        "/models/train", json={"method": "denn", "model_dir": str(tmp_path / "m")}
    )
    assert response.status_code == 400


def test_train_rejects_unknown_method(client, dataset_path, tmp_path):
    response = client.post(
        "/models/train",
        json={"method": "boost", "model_dir": str(tmp_path / "m"), "dataset_csv": dataset_path},
    )
    assert response.status_code == 400


def test_optimize_bad_loan_ids(client, dataset_path, tmp_path_factory):
    model_dir = tmp_path_factory.mktemp("models") / "denn2"
    client.post(
        "/models/train",
        json={
            "method": "denn",
            "model_dir": str(model_dir),
            "dataset_csv": dataset_path,
            "epochs": 1,
        },
    )
    response = client.post(
        "/portfolios/optimize",
        json={
            "model_dir": str(model_dir),
            "dataset_csv": dataset_path,
            "loan_ids": [99999],
            "scenarios": 50,
        },
    )
    assert response.status_code == 400


def test_experiment_and_report(client, tmp_path):
    out = tmp_path / "run"
    response = client.post(
        "/experiments/run",
        json={
            "out_dir": str(out),
            "synth": {"n_loans": 300, "feature_width": 4, "seed": 3},
            "methods": ["equal", "random"],
            "portfolio_size": 4,
            "portfolio_count": 6,
            "scenarios": 100,
            "seed": 11,
            "epochs": 1,
        },
    )
    assert response.status_code == 200
    body = response.json()
    assert set(body["table"]["annualized_var"]) == {"equal", "random"}
    assert (out / "report.tsv").exists()

    response = client.post("/reports/render", json={"run_dir": str(out)})
    assert response.status_code == 200
    rendered = response.json()
    assert rendered["table"]["annualized_var"]["equal"] == pytest.approx(
        body["table"]["annualized_var"]["equal"]
    )


def test_report_missing_run_dir(client, tmp_path):
    response = client.post("/reports/render", json={"run_dir": str(tmp_path / "absent")})
    assert response.status_code == 400
