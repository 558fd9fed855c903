"""Desk-scale Widevine EME simulator and privacy-conformance auditor."""

__version__ = "0.1.0"
