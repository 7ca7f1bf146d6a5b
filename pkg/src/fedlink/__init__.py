"""Federated node-traffic forecasting and link utilization ranking."""

__version__ = "0.1.0"
