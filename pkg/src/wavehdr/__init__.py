"""Frequency-guided HDR fusion built on a small numpy autodiff engine."""

__version__ = "0.1.0"
