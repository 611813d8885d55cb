"""Test utilities package."""

__all__ = []
