"""Finite-volume solver for a nonlocal Cahn-Hilliard equation with degenerate mobility."""

__version__ = "0.1.0"
