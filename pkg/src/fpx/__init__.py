"""Adaptive FP4/FP8 mixed-precision planning for latency-sensitive agents."""

__version__ = "0.1.0"
