"""Nucleus instance segmentation: dual-branch attention U-network, post-processing and metrics."""

__version__ = "0.1.0"
