"""Temporally expressive networks for dialogue state tracking."""
