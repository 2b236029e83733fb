"""Stark-tone ZZ crosstalk simulator and gate calibration toolkit."""

__version__ = "0.1.0"
