"""Simulation-backed three-stage visual servoing and dual-arm coordination."""

__version__ = "0.1.0"
