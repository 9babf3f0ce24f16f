"""Video Mixture of Block Attention: reference implementation and verification harness."""

__version__ = "1.0.0"
