"""Desk-scale platform for governed composition of typed service workflows."""

from .core import Workspace

__all__ = ["Workspace"]
__version__ = "0.1.0"
