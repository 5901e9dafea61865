"""Text embeddings from a decoder LM adapted by context-compression pretext training."""

__version__ = "0.1.0"
