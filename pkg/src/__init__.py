"""
Nested Gaussian graphical model tests
"""

__version__ = "0.1.0"
