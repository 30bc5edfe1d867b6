"""Forensicability assessment network (FANet)."""
__version__ = "0.1.0"
