"""Differentiable Gaussian splatting of a single rigid object under one
directional light, with a sun-conditioned appearance network and
shadow splatting toward the sun."""

__version__ = "0.1.0"
