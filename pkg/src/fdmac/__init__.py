"""Analysis lab for CSMA/CA medium access with full-duplex access points."""

__version__ = "0.1.0"
