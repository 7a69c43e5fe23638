"""Adaptive-rate deep joint source-channel coding over AWGN."""

__version__ = "0.1.0"
