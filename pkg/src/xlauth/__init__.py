"""Cross-layer device authentication simulator.

Combines an ECC certificate handshake with lightweight re-authentication
based on hardware fingerprints (carrier frequency offset and quadrature
skew) extracted from simulated OFDM frames.
"""

__version__ = "0.1.0"
