"""Noise-plus-interference suppression for pilot-based MIMO-OFDM channel estimation."""

__version__ = "0.1.0"
