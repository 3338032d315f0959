"""Recurrent Gaussian splatting: caustic separation by residual low-pass filtering."""
__version__ = "0.1.0"
