"""Minimal HTTP generation server for the occuprobe wire protocol."""

__version__ = "0.1.0"
