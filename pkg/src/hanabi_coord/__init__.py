"""Desk-scale Hanabi human-AI coordination platform."""

__version__ = "0.1.0"
