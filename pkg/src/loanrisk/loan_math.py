"""Deterministic loan-return arithmetic.

A loan of amount ``M`` repays a fixed monthly installment ``C`` for up to
``L`` months. If the borrower stops after ``t_d`` payments, the realized
monthly return is the rate ``r`` that discounts the ``t_d`` installments
back to ``M``. All rates in this package are monthly; annualization is a
reporting step only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Lowest representable monthly return: every payment discounted to nothing.
_MIN_RATE = -1.0 + 1e-12
_RESIDUAL_TOL = 1e-10
# enough to shrink the widest possible bracket (~2^31) to float resolution
_MAX_BISECT = 120


@dataclass(frozen=True)
class LoanTerms:
    """Contractual terms of a single loan.

    amount: principal financed (currency units, > 0)
    installment: fixed monthly repayment (currency units, > 0)
    term_months: arranged number of repayments (>= 1)
    monthly_rate: promised monthly return if the loan never defaults (> -1)
    """

    amount: float
    installment: float
    term_months: int
    monthly_rate: float

    def __post_init__(self):
        if not (math.isfinite(self.amount) and self.amount > 0):
            raise ValueError(f"loan amount must be positive and finite, got {self.amount}")
        if not (math.isfinite(self.installment) and self.installment > 0):
            raise ValueError(f"installment must be positive and finite, got {self.installment}")
        if int(self.term_months) != self.term_months or self.term_months < 1:
            raise ValueError(f"term must be a positive integer month count, got {self.term_months}")
        if not (math.isfinite(self.monthly_rate) and self.monthly_rate > -1.0):
            raise ValueError(f"promised rate must be finite and > -1, got {self.monthly_rate}")


def annuity_factor(rate, months):
    """Present value of `months` unit payments at `rate`, elementwise.

    Computed as -expm1(-months*log1p(rate))/rate, which stays accurate for
    rates arbitrarily close to 0 and to -1. rate == 0 returns `months`.
    """
    rate = np.asarray(rate, dtype=np.float64)
    months = np.asarray(months, dtype=np.float64)
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        factor = -np.expm1(-months * np.log1p(rate)) / rate
    factor = np.where(rate == 0.0, months, factor)
    return factor


def terms_consistency_gap(terms: LoanTerms) -> float:
    """Relative gap between the amount and the promised-rate annuity value.

    Zero (to rounding) when the installment was derived from
    (amount, term, rate) by the standard annuity relation.
    """
    pv = float(terms.installment * annuity_factor(terms.monthly_rate, terms.term_months))
    return abs(pv - terms.amount) / terms.amount


def installment_for(amount: float, rate: float, months: int) -> float:
    """Installment that makes (amount, installment, months, rate) self-consistent."""
    return amount / float(annuity_factor(rate, months))


def _solve_rates(amounts: np.ndarray, installments: np.ndarray, months: np.ndarray) -> np.ndarray:
    """Vectorized bracketed bisection for the discount rate of each annuity.

    Solves amount = installment * annuity_factor(r, months) per element.
    The present value is strictly decreasing in r for months >= 1, so a
    sign-changing bracket pins the unique root above -1.
    """
    amounts = np.asarray(amounts, dtype=np.float64)
    installments = np.asarray(installments, dtype=np.float64)
    months = np.asarray(months, dtype=np.float64)

    def gap(rate):
        return installments * annuity_factor(rate, months) - amounts

    lo = np.full(amounts.shape, _MIN_RATE)
    hi = np.full(amounts.shape, 1.0)
    for _ in range(64):
        open_mask = gap(hi) >= 0.0
        if not open_mask.any():
            break
        hi = np.where(open_mask, hi * 2.0 + 1.0, hi)
    else:
        raise ArithmeticError("failed to bracket the loan return")

    # fixed iteration count: converges to float resolution well before the
    # cap, and keeps scalar and batched solves bit-identical per element
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        above = gap(mid) >= 0.0
        lo = np.where(above, mid, lo)
        hi = np.where(above, hi, mid)
    rates = 0.5 * (lo + hi)

    residual = np.abs(installments * annuity_factor(rates, months) - amounts) / amounts
    if np.any(residual >= _RESIDUAL_TOL):
        raise ArithmeticError(
            f"loan-return root residual {residual.max():.3e} exceeds {_RESIDUAL_TOL:.0e}"
        )
    return rates


def default_return(terms: LoanTerms, months_paid: int) -> float:
    """Monthly return of a loan that made exactly `months_paid` installments.

    Returns the unique r > -1 with amount == installment * sum of the
    `months_paid` discounted payments; exactly -1 when nothing was repaid.
    """
    if not math.isfinite(months_paid) or int(months_paid) != months_paid:
        raise ValueError(f"months paid must be an integer, got {months_paid}")
    months_paid = int(months_paid)
    if months_paid < 0 or months_paid > terms.term_months:
        raise ValueError(
            f"months paid must lie in [0, {terms.term_months}], got {months_paid}"
        )
    if months_paid == 0:
        return -1.0
    rates = _solve_rates(
        np.asarray([terms.amount]), np.asarray([terms.installment]), np.asarray([months_paid])
    )
    return float(rates[0])


def default_return_batch(amounts, installments, months_paid) -> np.ndarray:
    """default_return over parallel arrays of loan triples, one solve pass.

    Entries with zero months paid come back as exactly -1.
    """
    amounts = np.asarray(amounts, dtype=np.float64)
    installments = np.asarray(installments, dtype=np.float64)
    months = np.asarray(months_paid)
    if not (amounts.shape == installments.shape == months.shape):
        raise ValueError("amounts, installments and months paid must have equal shape")
    if np.any(months < 0) or np.any(months != np.floor(months)):
        raise ValueError("months paid must be non-negative integers")
    out = np.full(amounts.shape, -1.0)
    paying = months > 0
    if paying.any():
        out[paying] = _solve_rates(amounts[paying], installments[paying], months[paying])
    return out


def default_return_curve(terms: LoanTerms, up_to: int | None = None) -> np.ndarray:
    """default_return for every payment count 0..up_to (default term-1).

    Index t of the result is the monthly return after t installments;
    entry 0 is exactly -1.
    """
    if up_to is None:
        up_to = terms.term_months - 1
    if up_to < 0 or up_to > terms.term_months:
        raise ValueError(f"curve end must lie in [0, {terms.term_months}], got {up_to}")
    curve = np.full(up_to + 1, -1.0)
    if up_to >= 1:
        months = np.arange(1, up_to + 1)
        curve[1:] = _solve_rates(
            np.full(up_to, terms.amount), np.full(up_to, terms.installment), months
        )
    return curve


def realized_return(terms: LoanTerms, defaulted: bool, months_paid: int = 0) -> float:
    """Observed monthly return: the promised rate, or the post-default rate."""
    if not defaulted:
        return terms.monthly_rate
    if months_paid >= terms.term_months:
        raise ValueError(
            f"a defaulted loan repays fewer than {terms.term_months} installments, "
            f"got {months_paid}"
        )
    return default_return(terms, months_paid)


def annualized_loss(monthly_return: float) -> float:
    """Loss reported on an annual scale: -12 times the monthly return."""
    if not math.isfinite(monthly_return):
        raise ValueError(f"monthly return must be finite, got {monthly_return}")
    return -12.0 * monthly_return
