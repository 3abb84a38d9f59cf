"""Entire-space conversion models on a synthetic multi-stage funnel."""

__version__ = "0.1.0"
