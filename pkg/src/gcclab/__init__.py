"""Control regions, geometric control certification and damped-wave experiments on planar domains."""

__version__ = "0.1.0"
