"""Tree-indexed random-walk sampling: simulation, estimators and variance theory."""

__version__ = "0.1.0"
