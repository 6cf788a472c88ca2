"""
Utility modules for Quench
"""
