"""HyperConvolution toolkit: layers, HyperUNet, cost accounting, metrics and training."""

__version__ = "0.1.0"
