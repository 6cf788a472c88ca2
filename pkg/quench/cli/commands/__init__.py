"""
Command module package for Quench CLI.
"""
