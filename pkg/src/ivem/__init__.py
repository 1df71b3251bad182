"""Immersed virtual element method for H1 and H(curl) interface problems on unfitted tetrahedral meshes."""

from .errors import (
    ConfigurationError,
    ConformityError,
    DegenerateGeometryError,
    DivergenceError,
    InvalidArgumentError,
    IVEMError,
    TopologyError,
)

__version__ = "0.1.0"
