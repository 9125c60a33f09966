"""Learning morphological image operators with counter-harmonic mean layers."""

__version__ = "0.1.0"
