"""HTTP service exposing the detection pipeline."""

from .app import create_app

__all__ = ["create_app"]
