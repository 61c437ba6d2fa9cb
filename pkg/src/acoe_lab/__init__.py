"""Average-cost optimality laboratory for periodic-review inventory control."""

__version__ = "0.1.0"
