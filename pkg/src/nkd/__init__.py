"""NK, NKCS and NKD fitness landscapes with adaptive-walk experiments."""

__version__ = "0.1.0"
