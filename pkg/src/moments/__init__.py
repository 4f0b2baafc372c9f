"""Highlight-reel localization and moment-dataset tooling for sports broadcasts."""

__version__ = "0.1.0"
