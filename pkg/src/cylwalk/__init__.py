"""Monte Carlo lab for simple random walk on (Z/NZ)^d x Z and random interlacements."""

__version__ = "0.1.0"
