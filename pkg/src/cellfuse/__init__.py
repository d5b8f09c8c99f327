"""Multiview circuit representation learning over cell netlists and AIGs."""

__version__ = "0.1.0"
