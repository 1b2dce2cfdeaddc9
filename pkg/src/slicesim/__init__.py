"""Multi-tenant network slicing: grid, radio, user choice, simulation and analysis."""

__version__ = "0.1.0"
