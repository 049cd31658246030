"""Desk-scale multi-view stereo: cascade plane-sweep depth estimation with
coordinate-attention features and cross-stage cost guidance, depth fusion,
and point-cloud evaluation.

Kept import-light on purpose: the CLI applies --threads to the BLAS
environment before numpy loads.
"""

__version__ = "0.1.0"
