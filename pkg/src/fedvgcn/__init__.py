"""Vertically federated GraphSage with Paillier-encrypted intermediate exchange."""

__version__ = "0.1.0"
