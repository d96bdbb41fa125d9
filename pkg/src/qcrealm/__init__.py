"""Numerical decoherent-histories toolkit: realms, records, baths and the quasiclassical limit."""

__version__ = "0.1.0"
