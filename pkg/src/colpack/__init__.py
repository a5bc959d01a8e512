"""Hard-particle Monte Carlo packing workflows."""

__version__ = "0.1.0"
