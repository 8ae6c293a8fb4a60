"""Ship detection on raw and range-compressed SAR echoes."""

__version__ = "0.1.0"
