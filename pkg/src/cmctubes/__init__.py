"""Geodesic tubes around minimal submanifolds: geometry, spectra, CMC solves."""

__version__ = "0.1.0"

from .geometry import AmbientManifold, CurvatureData, GeodesicState
from .catalog import make_geometry, manifold_from_config

__all__ = [
    "AmbientManifold",
    "CurvatureData",
    "GeodesicState",
    "make_geometry",
    "manifold_from_config",
    "__version__",
]
