"""
Tests package for Airic.
""" 