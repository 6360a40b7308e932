"""Targeted-mask continual pre-training for event temporal reasoning at desk scale."""

__version__ = "0.1.0"
