"""Decode-and-forward relaying with SC-FDE at a multi-antenna relay and destination."""

__version__ = "0.1.0"
