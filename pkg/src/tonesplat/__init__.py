"""Joint Gaussian splatting and per-view tone mapping on CPU."""

__version__ = "0.1.0"
