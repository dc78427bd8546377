"""Tensor-network toolbox for one-dimensional quantum many-body states."""

__version__ = "0.1.0"
