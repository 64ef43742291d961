"""HTTP service wrapping the credit-risk engine."""

from .app import app, create_app

__all__ = ["app", "create_app"]
