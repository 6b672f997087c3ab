"""Astromorphic self-attention with a tripartite-synapse simulator."""

__version__ = "0.1.0"
