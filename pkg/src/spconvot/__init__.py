"""Sparse spatio-temporal convolution for human point cloud sequences."""

__version__ = "0.1.0"
