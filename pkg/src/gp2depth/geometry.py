"""Pinhole unprojection, depth/disparity conversion and shift/scale distortion measures.

A disparity transform ``D -> c1 * D + c2`` rescales each 3-D point along its
own viewing ray by ``1 / (c1 + c2 * z)``. With ``c2 == 0`` the whole scene is
scaled uniformly and shape is preserved; any ``c2 != 0`` scales near and far
points differently, which is what the distortion measures below quantify.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .depthcore import (
    CameraIntrinsics,
    Grid2D,
    GridError,
    PointCloud,
    PositivityError,
    Unit,
    as_grid,
    require_positive,
    resolve_mask,
)


class DegenerateGeometryError(GridError):
    pass


@dataclass(frozen=True)
class DisparityAffine:
    c1: float = 1.0
    c2: float = 0.0

    def then(self, other: "DisparityAffine") -> "DisparityAffine":
        """Apply ``self`` first, then ``other``."""
        return DisparityAffine(self.c1 * other.c1, self.c2 * other.c1 + other.c2)

    def transform_depth(self, d):
        d = np.asarray(d, dtype=np.float64)
        return d / (self.c1 + self.c2 * d)


@dataclass(frozen=True)
class LineParam:
    a: float
    b: float
    c: float

    def depth(self, x, y):
        return self.a * np.asarray(x, dtype=np.float64) + self.b * np.asarray(y, dtype=np.float64) + self.c


def unproject(depth: Grid2D, mask, cam: CameraIntrinsics) -> PointCloud:
    depth = as_grid(depth, Unit.DEPTH)
    bits = resolve_mask(depth, mask)
    require_positive(depth.values, bits, "depth")
    v, u = np.nonzero(bits)
    d = depth.values[v, u]
    pts = np.column_stack([(u - cam.u0) * d / cam.fx, (v - cam.v0) * d / cam.fy, d])
    return PointCloud(pts, np.column_stack([u, v]))


def unproject_pixels(u, v, d, cam: CameraIntrinsics) -> np.ndarray:
    u, v, d = (np.asarray(a, dtype=np.float64) for a in (u, v, d))
    return np.column_stack([(u - cam.u0) * d / cam.fx, (v - cam.v0) * d / cam.fy, d])


def project(points, cam: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixel coordinates ``(u, v)`` and depth of 3-D points; depth must be positive."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    z = pts[:, 2]
    if not np.all(z > 0):
        raise PositivityError("points must lie in front of the camera (z > 0)")
    return cam.fx * pts[:, 0] / z + cam.u0, cam.fy * pts[:, 1] / z + cam.v0, z


def depth_to_disparity(depth: Grid2D) -> Grid2D:
    depth = as_grid(depth, Unit.DEPTH)
    require_positive(depth.values, depth.valid_bits(), "depth")
    with np.errstate(divide="ignore"):
        return Grid2D(1.0 / depth.values, Unit.DISPARITY, depth.mask)


def disparity_to_depth(disp: Grid2D) -> Grid2D:
    disp = as_grid(disp, Unit.DISPARITY)
    require_positive(disp.values, disp.valid_bits(), "disparity")
    with np.errstate(divide="ignore"):
        return Grid2D(1.0 / disp.values, Unit.DEPTH, disp.mask)


def log_depth_to_disparity(log_depth: Grid2D) -> Grid2D:
    log_depth = as_grid(log_depth, Unit.LOG_DEPTH)
    return Grid2D(np.exp(-log_depth.values), Unit.DISPARITY, log_depth.mask)


def apply_disparity_affine(depth: Grid2D, t: DisparityAffine, mask=None) -> Grid2D:
    """Depth whose disparity is ``c1 / d + c2``, i.e. ``d / (c1 + c2 * d)``."""
    depth = as_grid(depth, Unit.DEPTH)
    bits = resolve_mask(depth, mask)
    require_positive(depth.values, bits, "depth")
    new_disp = t.c1 / depth.values + t.c2
    bad = bits & ~(new_disp > 0)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise PositivityError(
            f"transformed disparity c1/d + c2 = {new_disp[r, c]!r} is not positive at (u={c}, v={r})",
            pixel=(int(c), int(r)),
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(bits, t.transform_depth(depth.values), depth.values)
    return Grid2D(out, Unit.DEPTH, depth.mask)


def _transformed_depth(z: float, t: DisparityAffine) -> float:
    if not z > 0:
        raise PositivityError(f"depth must be positive, got {z!r}")
    if not t.c1 / z + t.c2 > 0:
        raise PositivityError(f"transform makes disparity non-positive at depth {z!r}")
    return z / (t.c1 + t.c2 * z)


def depth_ratio_distortion(z1: float, z2: float, t: DisparityAffine) -> float:
    """``|log((z1'/z2') / (z1/z2))|`` where primes denote transformed depths."""
    w1 = _transformed_depth(z1, t)
    w2 = _transformed_depth(z2, t)
    return abs(np.log((w1 / w2) * (z2 / z1)))


def transform_points(points, t: DisparityAffine, cam: CameraIntrinsics) -> np.ndarray:
    """Project, transform depth through disparity space, unproject."""
    u, v, z = project(points, cam)
    bad = ~(t.c1 / z + t.c2 > 0)
    if bad.any():
        raise PositivityError(f"transform makes disparity non-positive at point {int(np.argmax(bad))}")
    return unproject_pixels(u, v, t.transform_depth(z), cam)


def vertex_angle(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateGeometryError("angle undefined for a zero-length edge")
    # atan2 form stays accurate near 0 and pi
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), np.dot(a, b)))


def angle_distortion(p, q, r, t: DisparityAffine, cam: CameraIntrinsics) -> float:
    """Change of the angle at vertex ``q`` of the corner ``p-q-r`` under ``t``."""
    pts = np.array([p, q, r], dtype=np.float64)
    before = vertex_angle(pts[0] - pts[1], pts[2] - pts[1])
    moved = transform_points(pts, t, cam)
    after = vertex_angle(moved[0] - moved[1], moved[2] - moved[1])
    return abs(after - before)


def collinearity_residual(points) -> float:
    """RMS distance of the points to their least-squares 3-D line."""
    pts = points.points if isinstance(points, PointCloud) else np.asarray(points, dtype=np.float64)
    pts = pts.reshape(-1, 3)
    if len(pts) < 3:
        raise DegenerateGeometryError("collinearity needs at least 3 points")
    centered = pts - pts.mean(axis=0)
    # squared distances to the principal axis equal the energy in the two minor singular values
    s = np.linalg.svd(centered, compute_uv=False)
    return float(np.sqrt(np.sum(s[1:] ** 2) / len(pts)))


def affine_depth_locus(line: LineParam, t: DisparityAffine, cam: CameraIntrinsics,
                     samples: Sequence[tuple[float, float]]) -> PointCloud:
    """3-D locus of image samples whose depth is affine in image coordinates, after ``t``.

    Depth along the samples is ``a*x + b*y + c``; the transformed depth is
    ``d / (c1 + c2 * d)``. Sample coordinates are pixel coordinates.
    """
    xy = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    d = line.depth(xy[:, 0], xy[:, 1])
    if not np.all(d > 0):
        raise PositivityError("line depth a*x + b*y + c must be positive at every sample")
    denom = t.c1 + t.c2 * d
    if not np.all(denom > 0):
        raise PositivityError("transformed depth must be positive at every sample")
    pts = unproject_pixels(xy[:, 0], xy[:, 1], d / denom, cam)
    return PointCloud(pts, np.rint(xy).astype(np.int64))
