"""Geometry-preserving depth training on mixtures of up-to-scale and up-to-shift-and-scale data."""

from .depthcore import (
    CameraIntrinsics,
    Grid2D,
    PointCloud,
    SupervisionClass,
    Unit,
    ValidityMask,
    read_pfm,
    write_pfm,
    write_ply_ascii,
)

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "Grid2D",
    "PointCloud",
    "SupervisionClass",
    "Unit",
    "ValidityMask",
    "read_pfm",
    "write_pfm",
    "write_ply_ascii",
]
