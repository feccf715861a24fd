"""Shrinking-window tests for justification bias in self-assessed health."""

__version__ = "0.1.0"
