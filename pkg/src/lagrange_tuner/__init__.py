"""Per-clip Lagrangian multiplier tuning for video encoders."""

__version__ = "0.1.0"
