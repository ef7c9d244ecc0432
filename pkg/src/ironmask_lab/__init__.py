"""Cryptanalysis workbench for the hypersphere secure sketch."""

__version__ = "0.1.0"
