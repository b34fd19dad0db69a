"""Noether complex of lattice currents, spectral filters and higher Berry invariants."""

from importlib import metadata

try:
    __version__ = metadata.version("artifact")
except metadata.PackageNotFoundError:  # pragma: no cover
    __version__ = "0+unknown"
