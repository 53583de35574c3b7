"""Debate-based triple classification on knowledge graphs."""

__version__ = "0.1.0"
