"""Two-person graph convolutional networks for skeleton interaction recognition."""

__version__ = "0.1.0"
