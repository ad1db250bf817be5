"""Analytics augmented generation over semantically labeled relational data."""

__version__ = "0.1.0"
