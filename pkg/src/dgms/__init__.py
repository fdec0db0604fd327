"""Discontinuous Galerkin multiscale method on Cartesian meshes."""

__version__ = "0.1.0"

from .errors import ConfigError, IngestionError, NumericalError  # noqa: F401
