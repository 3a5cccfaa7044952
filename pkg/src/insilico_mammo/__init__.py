"""Desk-scale in silico mammography: phantoms, masses, compression, x-ray projection, readers."""

__version__ = "0.1.0"
