"""Covisibility annotation, pair statistics, desk-scale two-view training,
and pose evaluation."""

__version__ = "0.1.0"
