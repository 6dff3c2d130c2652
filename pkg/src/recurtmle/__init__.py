"""Targeted estimation of the expected number of recurrent events under a baseline intervention."""

__version__ = "0.1.0"
