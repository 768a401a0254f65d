"""Administer the O*NET Interest Profiler short form to chat models and analyze the answers."""

__version__ = "0.1.0"
