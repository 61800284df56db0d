"""Capacity expansion planning under climate uncertainty with robust multi-year storage."""

__version__ = "0.1.0"
