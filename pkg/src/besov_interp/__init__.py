"""
Besov Interp - K-functionals and real interpolation norms on dyadic grids.
"""

__version__ = "0.1.0"
