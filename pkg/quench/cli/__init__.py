"""
Command-line interface for Quench
"""
