"""Rigid tube MPC toolkit: offline synthesis, a real-time parallel
suboptimal controller, a centralized baseline, closed-loop simulation and
benchmarking."""

__version__ = "0.1.0"

BUNDLE_SCHEMA_VERSION = 1
