"""Tabular lab for what scalar Markovian rewards can and cannot express."""

__version__ = "0.1.0"
