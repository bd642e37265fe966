"""Sequential generative modelling of brick structures."""

__version__ = "0.1.0"
