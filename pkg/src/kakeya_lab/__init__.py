"""Desk-scale laboratory for direction-separated tube families."""

__version__ = "0.1.0"
