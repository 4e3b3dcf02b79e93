"""Pressurized phase-field fracture, crack reconstruction and crack-flow coupling in 2D."""
__version__ = "0.1.0"
