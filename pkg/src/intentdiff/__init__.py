"""Trajectory prediction with polar intent guidance and diffusion sampling."""

__version__ = "0.1.0"
