"""Screening toolkit for optically addressable spin defects: active-space
models, compressed double factorization, statevector product formulas and
spectroscopy estimators with resource accounting."""

__version__ = "0.1.0"
