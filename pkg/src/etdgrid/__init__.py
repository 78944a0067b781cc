"""Error-temporal-difference deep Q-learning for microgrid battery dispatch."""

__version__ = "0.1.0"
