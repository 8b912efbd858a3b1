"""Reference-aware quality scoring for generated videos over cached embeddings."""

__version__ = "0.1.0"
