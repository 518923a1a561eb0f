"""Coordinated monitoring-control attack analysis for DC-dispatched grids."""

__version__ = "0.1.0"
