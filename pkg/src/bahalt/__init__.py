"""Simulation and auditing of synchronous agreement protocols under locally consistent adversaries."""

__version__ = "0.1.0"
