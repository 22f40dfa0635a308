"""Freidlin-Wentzell instantons, drift-norm landscapes and caustic checks."""
__version__ = "0.1.0"
