import numpy as np
import pytest
from scipy.special import expit

from loanrisk import denn
from loanrisk import neural as nn
from loanrisk.data import LoanRecord
from loanrisk.loan_math import LoanTerms, default_return, installment_for


def make_record(loan_id, features, lifetime, default_flag, rate=0.008, term=36):
    terms = LoanTerms(10000.0, installment_for(10000.0, rate, term), term, rate)
    return LoanRecord(loan_id, np.asarray(features, float), terms, lifetime, default_flag)


def threshold_dataset(n, seed, term=36):
    """Default is a deterministic threshold on the first feature."""
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 4))
    defaults = (x[:, 0] > 0.3).astype(int)
    records = []
    for i in range(n):
        if defaults[i]:
            lifetime = int(min(term - 1, round(term * expit(x[i, 1]))))
        else:
            lifetime = term
        records.append(make_record(i, x[i], lifetime, int(defaults[i]), term=term))
    return records


@pytest.fixture(scope="module")
def trained():
    records = threshold_dataset(1500, seed=0)
    cfg = nn.TrainConfig(batch_size=128, learning_rate=0.05, epochs=25, seed=3)
    return denn.train_denn(records, cfg, l2=1e-5)


class TestTrainDenn:
    def test_no_defaults_is_a_training_error(self):
        records = [make_record(i, np.zeros(4) + i, 36, 0) for i in range(10)]
        with pytest.raises(nn.TrainingError):
            denn.train_denn(records, nn.TrainConfig(epochs=1))

    def test_empty_set(self):
        with pytest.raises(ValueError):
            denn.train_denn([], nn.TrainConfig())

    def test_learns_threshold_default_rule(self, trained):
        holdout = threshold_dataset(600, seed=9)
        correct = 0
        for record in holdout:
            p = float(nn.forward(trained.model.default_rate_net, record.features)[0])
            correct += int((p > 0.5) == (record.default_flag == 1))
        assert correct / len(holdout) > 0.95

    def test_learns_lifetime_ratio(self, trained):
        holdout = [r for r in threshold_dataset(800, seed=10) if r.default_flag == 1]
        errors = []
        for record in holdout:
            ratio = float(nn.forward(trained.model.lifetime_net, record.features)[0])
            errors.append((ratio - record.lifetime / record.terms.term_months) ** 2)
        assert np.mean(errors) < 0.01


def rigged_model(ratio_logit, p_logit=0.0, width=4):
    """Networks with zeroed weights and forced output-layer biases."""
    dr = nn.init_network(denn.default_rate_network_spec(width, seed=0))
    dl = nn.init_network(denn.lifetime_network_spec(width, seed=0))
    for net, bias in ((dr, p_logit), (dl, ratio_logit)):
        for w in net.weights:
            w[:] = 0.0
        net.biases[-1][:] = bias
    return denn.DennModel(default_rate_net=dr, lifetime_net=dl)


class TestPredictDenn:
    def test_zero_ratio_maps_to_total_loss(self):
        model = rigged_model(ratio_logit=-50.0)
        record = make_record(0, np.zeros(4), 36, 0)
        dist = denn.predict_denn(model, record)
        assert dist.defaulted_return == -1.0

    def test_half_ratio_maps_to_mid_term(self):
        model = rigged_model(ratio_logit=0.0)  # sigmoid(0) = 0.5, 0.5 * 36 = 18
        record = make_record(0, np.zeros(4), 36, 0)
        dist = denn.predict_denn(model, record)
        assert dist.defaulted_return == default_return(record.terms, 18)

    def test_ratio_near_one_clamps_below_term(self):
        model = rigged_model(ratio_logit=50.0)
        record = make_record(0, np.zeros(4), 36, 0)
        dist = denn.predict_denn(model, record)
        assert dist.defaulted_return == default_return(record.terms, 35)

    def test_outputs_in_open_unit_interval(self, trained):
        for record in threshold_dataset(50, seed=2):
            dist = denn.predict_denn(trained.model, record)
            assert 0.0 < dist.default_rate < 1.0

    def test_masses_sum_to_one_exactly(self, trained):
        record = threshold_dataset(5, seed=4)[0]
        dist = denn.predict_denn(trained.model, record)
        assert dist.masses.sum() == 1.0
        assert dist.support[0] <= dist.support[1]

    def test_dimension_mismatch(self, trained):
        record = make_record(0, np.zeros(7), 36, 0)
        with pytest.raises(ValueError):
            denn.predict_denn(trained.model, record)


class TestBinaryReturnDistribution:
    def test_degenerate_no_default(self):
        dist = denn.BinaryReturnDistribution(0.008, 0.0, -1.0)
        assert np.array_equal(dist.masses, [0.0, 1.0])
        assert dist.mean() == 0.008

    def test_validation(self):
        with pytest.raises(ValueError):
            denn.BinaryReturnDistribution(0.008, 1.5, -1.0)
        with pytest.raises(ValueError):
            denn.BinaryReturnDistribution(0.008, 0.5, -1.2)
        with pytest.raises(ValueError):
            denn.BinaryReturnDistribution(0.008, 0.5, 0.7)


def test_save_load_round_trip(tmp_path, trained):
    denn.save_denn(trained.model, tmp_path / "m")
    loaded = denn.load_denn(tmp_path / "m")
    for a, b in (
        (loaded.default_rate_net, trained.model.default_rate_net),
        (loaded.lifetime_net, trained.model.lifetime_net),
    ):
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
        assert all(np.array_equal(x, y) for x, y in zip(a.biases, b.biases))
