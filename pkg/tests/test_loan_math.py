import math

import numpy as np
import pytest

from loanrisk.loan_math import (
    LoanTerms,
    annualized_loss,
    annuity_factor,
    default_return,
    default_return_curve,
    installment_for,
    realized_return,
    terms_consistency_gap,
)


def oracle_default_return(amount, installment, months_paid, lo=-1.0 + 1e-12, hi=10.0):
    """Independent bisection on the literal discounted-payment sum."""
    if months_paid == 0:
        return -1.0

    def present_value(rate):
        return sum(installment / (1.0 + rate) ** t for t in range(1, months_paid + 1))

    while present_value(hi) > amount:
        hi = hi * 2 + 1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if present_value(mid) >= amount:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def make_terms(amount=10000.0, rate=0.008, months=36):
    return LoanTerms(amount, installment_for(amount, rate, months), months, rate)


class TestDefaultReturn:
    def test_zero_payments_is_exactly_minus_one(self):
        assert default_return(make_terms(), 0) == -1.0

    def test_undiscounted_breakeven_is_zero(self):
        terms = LoanTerms(1200.0, 100.0, 36, 0.01)
        assert default_return(terms, 12) == pytest.approx(0.0, abs=1e-12)

    def test_partial_repayment_matches_oracle(self):
        terms = LoanTerms(1000.0, 100.0, 36, 0.01)
        r = default_return(terms, 6)
        assert r < 0
        assert r == pytest.approx(oracle_default_return(1000.0, 100.0, 6), abs=1e-9)
        residual = abs(sum(100.0 / (1 + r) ** t for t in range(1, 7)) - 1000.0) / 1000.0
        assert residual < 1e-10

    def test_random_triples_match_oracle(self):
        rng = np.random.default_rng(1234)
        for _ in range(200):
            amount = rng.uniform(500, 50000)
            months = int(rng.integers(1, 61))
            # keep total repayment above ~40% of the amount
            installment = rng.uniform(0.4 * amount / months, 2.5 * amount / months)
            terms = LoanTerms(amount, installment, 60, 0.01)
            r = default_return(terms, months)
            assert r == pytest.approx(
                oracle_default_return(amount, installment, months), abs=1e-9
            )

    def test_monotone_in_months_paid(self):
        terms = make_terms()
        curve = [default_return(terms, t) for t in range(0, 37)]
        assert all(b > a for a, b in zip(curve[1:], curve[2:]))

    def test_round_trip_residual(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            terms = make_terms(rate=float(rng.uniform(0.001, 0.03)))
            months = int(rng.integers(1, 37))
            r = default_return(terms, months)
            pv = float(terms.installment * annuity_factor(r, months))
            assert abs(pv - terms.amount) / terms.amount < 1e-10

    def test_bounded_by_promised_rate(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            terms = make_terms(rate=float(rng.uniform(0.001, 0.03)))
            months = int(rng.integers(0, 36))
            assert default_return(terms, months) <= terms.monthly_rate

    def test_full_term_recovers_promised_rate(self):
        terms = make_terms(rate=0.0123)
        assert default_return(terms, 36) == pytest.approx(0.0123, abs=1e-9)

    def test_domain_errors(self):
        terms = make_terms()
        with pytest.raises(ValueError):
            default_return(terms, -1)
        with pytest.raises(ValueError):
            default_return(terms, 37)
        with pytest.raises(ValueError):
            default_return(terms, float("nan"))
        with pytest.raises(ValueError):
            default_return(terms, 1.5)


class TestDefaultReturnCurve:
    def test_matches_scalar_op(self):
        terms = make_terms()
        curve = default_return_curve(terms)
        assert curve.shape == (36,)
        for t in (0, 1, 7, 35):
            assert curve[t] == default_return(terms, t)

    def test_strictly_increasing(self):
        curve = default_return_curve(make_terms())
        assert np.all(np.diff(curve[1:]) > 0)

    def test_bad_range(self):
        with pytest.raises(ValueError):
            default_return_curve(make_terms(), up_to=40)


class TestRealizedReturn:
    def test_non_default_is_promised_rate(self):
        terms = make_terms(rate=0.0077)
        assert realized_return(terms, defaulted=False) == 0.0077

    def test_default_without_payment(self):
        assert realized_return(make_terms(), defaulted=True, months_paid=0) == -1.0

    def test_zero_rate_annuity(self):
        terms = LoanTerms(1200.0, 100.0, 36, 0.01)
        assert realized_return(terms, True, 12) == pytest.approx(0.0, abs=1e-12)

    def test_default_at_term_is_inconsistent(self):
        with pytest.raises(ValueError):
            realized_return(make_terms(), defaulted=True, months_paid=36)


class TestAnnualizedLoss:
    def test_zero(self):
        assert annualized_loss(0.0) == 0.0

    def test_definition_and_reporting_scale(self):
        value = annualized_loss(-0.0313)
        assert value == pytest.approx(12 * 0.0313, abs=1e-15)
        # monthly loss of roughly 3.13% reports as an annualized loss near 0.3753
        assert value == pytest.approx(0.3753, abs=5e-4)

    def test_gain_maps_negative(self):
        assert annualized_loss(0.01) == pytest.approx(-0.12, abs=1e-15)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            annualized_loss(float("inf"))


class TestLoanTerms:
    def test_consistent_terms_have_zero_gap(self):
        assert terms_consistency_gap(make_terms()) < 1e-12

    def test_validation(self):
        with pytest.raises(ValueError):
            LoanTerms(-1.0, 100.0, 36, 0.01)
        with pytest.raises(ValueError):
            LoanTerms(1000.0, 0.0, 36, 0.01)
        with pytest.raises(ValueError):
            LoanTerms(1000.0, 100.0, 0, 0.01)
        with pytest.raises(ValueError):
            LoanTerms(1000.0, 100.0, 36, -1.5)

    def test_annuity_factor_zero_rate(self):
        assert float(annuity_factor(0.0, 36)) == 36.0

    def test_annuity_factor_tiny_rate_accuracy(self):
        # closed form must not lose precision near zero
        rate = 1e-12
        literal = sum(1.0 / (1 + rate) ** t for t in range(1, 37))
        assert float(annuity_factor(rate, 36)) == pytest.approx(literal, rel=1e-12)


def test_installment_for_inverts_annuity():
    installment = installment_for(25000.0, 0.006, 36)
    terms = LoanTerms(25000.0, installment, 36, 0.006)
    assert terms_consistency_gap(terms) < 1e-12
