"""
Test suite for hiersg
"""
