"""Label-guided synthetic speech data and end-to-end speech understanding training."""

__version__ = "0.1.0"
