"""Joint diffusion over molecular graphs and continuous property channels."""

__version__ = "0.1.0"
