"""Real-time keystroke detection from two-hand landmark streams."""

__version__ = "0.1.0"
