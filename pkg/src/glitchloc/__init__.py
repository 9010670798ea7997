"""Temporal forgery localization on synthetic audio-visual feature clips."""

__version__ = "0.1.0"
