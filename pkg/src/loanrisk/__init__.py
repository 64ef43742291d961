"""Loan-portfolio credit-risk engine.

Predicts per-loan return distributions with two neural approaches (a
default-rate/default-lifetime pair and a survival-based two-branch model),
simulates portfolio return scenarios, and minimizes portfolio VaR/CVaR
under simplex weight constraints.
"""

__version__ = "0.1.0"
