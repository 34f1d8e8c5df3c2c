"""Risk-level decompositions for finite MDPs, checked against brute force."""

__version__ = "0.1.0"
