"""Automated heuristic usability evaluation of screen recordings with multimodal chat models."""

__version__ = "0.1.0"
