"""Elastically killed, correlated reflected diffusions on the half-line.

Particle simulation, elastic heat kernels, empirical-measure analytics and a
finite-volume solver for the limiting SPDE with a noisy Robin boundary.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"
