"""Desk-scale toolkit for record-to-text generation that imitates the style of a retrieved exemplar sentence."""

__version__ = "0.1.0"
