"""Bundled lookup tables."""
