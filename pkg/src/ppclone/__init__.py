"""Polymorphism clones of finite structures, pp-definitions and
pp-interpretations, graphs with group actions, and free-term invariants."""

__version__ = "0.1.0"
