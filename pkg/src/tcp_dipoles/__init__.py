"""Monte Carlo and numerical tools for the two-dimensional two-component plasma with smeared charges."""

__version__ = "0.1.0"
