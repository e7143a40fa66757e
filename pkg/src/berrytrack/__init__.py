"""Conical-intersection detection by resolving quantized Berry phases of tracked variational states."""

__version__ = "0.1.0"

SCHEMA_VERSION = 1
