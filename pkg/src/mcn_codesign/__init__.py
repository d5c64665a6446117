"""Co-design of deadbeat controllers and multi-hop wireless network parameters."""

__version__ = "0.1.0"
