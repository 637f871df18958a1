"""Camouflaged object detection with a zoom pyramid, built on a small numpy autodiff engine."""

__version__ = "0.1.0"
