"""Interactive structure learning with committee-based query selection."""

__version__ = "0.1.0"
