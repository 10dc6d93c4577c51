"""Deterministic simulator for decentralized satellite-network verification."""

__version__ = "0.1.0"
