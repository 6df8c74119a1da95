"""Point processes on R^d x S^k: simulation, K-function estimation and separability tests."""

from .curves import KCurve, KSurface
from .geom import cap_measure, geodesic_distance, sphere_surface_measure
from .model import LgcpCovariance, k_pois
from .pattern import BoxWindow, SpaceSpherePattern, read_pattern, write_pattern

__version__ = "0.1.0"

__all__ = [
    "BoxWindow",
    "SpaceSpherePattern",
    "read_pattern",
    "write_pattern",
    "KCurve",
    "KSurface",
    "LgcpCovariance",
    "k_pois",
    "cap_measure",
    "geodesic_distance",
    "sphere_surface_measure",
    "__version__",
]
