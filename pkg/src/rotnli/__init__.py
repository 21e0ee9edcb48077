"""Symmetry-aware NLI with rotation label embeddings on a toy complex encoder."""

__version__ = "0.1.0"
