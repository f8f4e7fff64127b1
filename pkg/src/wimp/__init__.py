"""Map- and social-context conditioned trajectory forecasting toolkit."""

__version__ = "0.1.0"
