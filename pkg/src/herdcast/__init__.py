"""Herd sustainability scoring and county-level forecasting toolkit."""

__version__ = "0.1.0"
