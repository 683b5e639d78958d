"""Constructive results for residual networks: near-identity factorization of
linear maps, the linear residual optimization landscape, and exact
memorization with ReLU residual blocks."""

__version__ = "0.1.0"
