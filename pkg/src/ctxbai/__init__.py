"""Fixed-budget best-arm identification with contexts: RS-AIPW simulation tools."""

__version__ = "0.1.0"
