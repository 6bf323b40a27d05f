"""Text-compression-aided Transformer encoding at desk scale."""

__version__ = "0.1.0"
