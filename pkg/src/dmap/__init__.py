"""Hierarchical structural document maps with tri-path retrieval and
reflective question answering."""

__version__ = "0.1.0"
