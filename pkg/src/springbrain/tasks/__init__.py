"""Runnable experiment definitions."""
