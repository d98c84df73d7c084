"""Vocabulary selection for sequence-to-sequence decoding."""

__version__ = "0.1.0"
