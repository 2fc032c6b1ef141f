"""Metaorder reconstruction, square-root impact estimation and a
propagator-driven synthetic tape generator."""

__version__ = "0.1.0"
