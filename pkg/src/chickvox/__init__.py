"""Chick call analysis: detection, acoustic descriptors, clustering and group statistics."""

__version__ = "0.1.0"
