"""
Core functionality for Quench
"""
