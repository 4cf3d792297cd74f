"""Parallel-EIT cooling toolkit: chain modes, analytic rates, small open-system
simulations and sideband thermometry."""

__version__ = "0.1.0"
