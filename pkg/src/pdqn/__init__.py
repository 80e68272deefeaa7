"""Decentralized primal-dual quasi-Newton methods on a simulated network."""

__version__ = "0.1.0"
