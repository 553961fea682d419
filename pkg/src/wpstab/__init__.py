"""Warped-product Einstein metrics and their linear stability."""

from wpstab.grid import Grid, Jet
from wpstab.geometry import (
    BaseGeometry,
    FibreDescriptor,
    FibreEigentensor,
    Perturbation,
    SolitonData,
    WarpedProduct,
)

__all__ = [
    "Grid",
    "Jet",
    "BaseGeometry",
    "FibreDescriptor",
    "FibreEigentensor",
    "Perturbation",
    "SolitonData",
    "WarpedProduct",
]

__version__ = "0.1.0"
