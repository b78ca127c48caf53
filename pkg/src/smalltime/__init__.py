"""Small-time scaling structure of polynomial SDEs with degenerate additive noise."""

__version__ = "0.1.0"
