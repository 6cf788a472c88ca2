"""
Quench - quenched hitting and return time statistics for random interval maps
"""

__version__ = "0.1.0"
