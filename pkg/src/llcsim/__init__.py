"""Epoch-driven simulator of a non-inclusive LLC with DCA and inclusive ways,
plus a runtime LLC-management controller."""

__version__ = "0.1.0"
