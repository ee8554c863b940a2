"""
Test package for falling-sphere.
"""
