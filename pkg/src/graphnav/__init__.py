"""Behavioral navigation on topological maps: simulation, localization, control and evaluation."""

__version__ = "0.1.0"
