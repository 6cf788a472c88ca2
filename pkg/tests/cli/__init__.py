"""
CLI test package.
""" 