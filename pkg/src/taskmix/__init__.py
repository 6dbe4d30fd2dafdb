"""Task-inference meta-RL on planar rigid-body control problems."""

__version__ = "0.1.0"
