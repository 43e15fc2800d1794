"""Near-optimal control of path-dependent SDEs on Brownian exit-time skeletons."""

__version__ = "0.1.0"
