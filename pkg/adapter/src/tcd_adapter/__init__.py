"""Reference adapter for the tcd model subprocess protocol."""

__version__ = "0.1.0"
