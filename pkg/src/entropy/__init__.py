"""Entropy: durable erasure-coded storage over a permissionless peer set."""

__version__ = "0.1.0"
