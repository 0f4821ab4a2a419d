"""Identity-preserving tracking of anonymous 3D markers for multi-user rooms."""

__version__ = "0.1.0"
