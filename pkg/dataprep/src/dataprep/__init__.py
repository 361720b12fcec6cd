"""Offline conversion of GeoTIFF event sequences into scene bundles."""

__version__ = "0.1.0"
