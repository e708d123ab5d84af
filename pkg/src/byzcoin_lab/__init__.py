"""Laboratory for collectively signed blockchain consensus at desk scale."""

__version__ = "0.1.0"
