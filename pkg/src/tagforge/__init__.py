"""tagforge: target-aware synthetic person image generation."""

__version__ = "0.1.0"
