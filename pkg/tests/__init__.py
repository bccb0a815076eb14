"""
Test suite for ggm-directional-tests
"""
