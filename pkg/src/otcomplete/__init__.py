"""Unpaired point-cloud completion via (unbalanced) optimal transport."""

__version__ = "0.1.0"
