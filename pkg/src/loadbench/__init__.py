"""Benchmark engine for probabilistic day-ahead building load forecasting."""

__version__ = "0.1.0"
