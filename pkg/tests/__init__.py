"""Test package for the micformer toolkit."""
