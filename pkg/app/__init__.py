"""
Factor Space Engine
Numerical experiments on factor spaces of the unit ball by Möbius groups.
"""

__version__ = "0.1.0"
