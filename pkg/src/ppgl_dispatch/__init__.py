"""Dispatcher-orchestrated PPGL diagnostic pipeline at desk scale."""

__version__ = "0.1.0"
