"""Coexistence of CV-QKD with DWDM classical channels: noise budgets, key rates,
drift-compensated parameter estimation and channel allocation."""

__version__ = "0.1.0"
