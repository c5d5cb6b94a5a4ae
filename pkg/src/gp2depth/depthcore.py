"""Raster, mask, camera and point-cloud types plus the PFM / PLY codecs.

Rasters are stored row-major with a top-left origin as ``(height, width)``
float64 arrays. PFM's bottom-up row order is handled only inside
:func:`read_pfm` / :func:`write_pfm`. Invalid pixels keep whatever payload
they had; they are excluded by a :class:`ValidityMask`, never by sentinels.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    """A raster, mask or cloud violates its structural invariants."""


class PositivityError(GridError):
    """A value that must be strictly positive is not."""

    def __init__(self, message: str, pixel: tuple[int, int] | None = None):
        super().__init__(message)
        self.pixel = pixel


class PfmError(ValueError):
    """Malformed or unsupported PFM payload."""


class Unit(str, enum.Enum):
    DEPTH = "meters-depth"
    LOG_DEPTH = "log-depth"
    DISPARITY = "inverse-meters-disparity"
    DIMENSIONLESS = "dimensionless"


class SupervisionClass(str, enum.Enum):
    ABSOLUTE = "ABSOLUTE"
    UTS = "UTS"
    UTSS = "UTSS"

    @property
    def uses_uts_term(self) -> bool:
        """Indicator of the scale-invariant term in the mixture loss."""
        return self is not SupervisionClass.UTSS


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ValidityMask:
    bits: np.ndarray

    def __post_init__(self):
        bits = np.array(self.bits, dtype=bool, copy=True)
        if bits.ndim != 2 or bits.size == 0:
            raise GridError(f"mask must be a non-empty 2-D array, got shape {bits.shape}")
        object.__setattr__(self, "bits", _frozen(bits))

    @classmethod
    def all_valid(cls, width: int, height: int) -> "ValidityMask":
        return cls(np.ones((height, width), dtype=bool))

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    @property
    def fraction(self) -> float:
        return self.count / self.bits.size

    def indices(self) -> np.ndarray:
        """Flat row-major indices of the valid pixels."""
        return np.flatnonzero(self.bits)

    def __and__(self, other: "ValidityMask") -> "ValidityMask":
        check_same_shape(self, other)
        return ValidityMask(self.bits & other.bits)


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Single-channel raster; ``values`` has shape ``(height, width)``."""

    values: np.ndarray
    unit: Unit = Unit.DIMENSIONLESS
    mask: ValidityMask | None = None

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or values.size == 0:
            raise GridError(f"grid values must be a non-empty 2-D array, got shape {values.shape}")
        unit = Unit(self.unit)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "unit", unit)
        if self.mask is not None:
            check_same_shape(self, self.mask)
        if unit is Unit.DEPTH:
            require_positive(values, self.valid_bits(), "depth")

    @classmethod
    def from_flat(cls, width: int, height: int, values, unit: Unit = Unit.DIMENSIONLESS,
                  mask: ValidityMask | None = None) -> "Grid2D":
        flat = np.asarray(values, dtype=np.float64).ravel()
        if width <= 0 or height <= 0:
            raise GridError("width and height must be positive")
        if flat.size != width * height:
            raise GridError(f"expected {width * height} values for {width}x{height}, got {flat.size}")
        return cls(flat.reshape(height, width), unit, mask)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def valid_bits(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.values.shape, dtype=bool)
        return self.mask.bits

    def with_values(self, values, unit: Unit | None = None) -> "Grid2D":
        return Grid2D(values, self.unit if unit is None else unit, self.mask)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    u0: float
    v0: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GridError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @classmethod
    def centered(cls, width: int, height: int, focal: float, fy: float | None = None) -> "CameraIntrinsics":
        """Principal point at the geometric image center, pixel centers at integer coordinates."""
        return cls(float(focal), float(focal if fy is None else fy), (width - 1) / 2.0, (height - 1) / 2.0)


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    source: np.ndarray | None = field(default=None)

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 3)
        object.__setattr__(self, "points", _frozen(pts))
        if self.source is not None:
            src = np.array(self.source, dtype=np.int64, copy=True).reshape(-1, 2)
            if len(src) != len(pts):
                raise GridError(f"source has {len(src)} entries for {len(pts)} points")
            object.__setattr__(self, "source", _frozen(src))

    def __len__(self) -> int:
        return len(self.points)

    def scaled(self, s: float) -> "PointCloud":
        return PointCloud(self.points * s, self.source)


def check_same_shape(a, b) -> None:
    sa = (a.height, a.width)
    sb = (b.height, b.width)
    if sa != sb:
        raise GridError(f"dimension mismatch: {sa[1]}x{sa[0]} vs {sb[1]}x{sb[0]}")


def require_positive(values: np.ndarray, bits: np.ndarray, what: str) -> None:
    bad = bits & ~(values > 0)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise PositivityError(
            f"{what} must be strictly positive at valid pixels; (u={c}, v={r}) holds {values[r, c]!r}",
            pixel=(int(c), int(r)),
        )


def as_grid(x, unit: Unit = Unit.DIMENSIONLESS) -> Grid2D:
    if isinstance(x, Grid2D):
        return x
    return Grid2D(np.atleast_2d(np.asarray(x, dtype=np.float64)), unit)


def resolve_mask(grid: Grid2D, mask) -> np.ndarray:
    """Boolean ``(h, w)`` array for ``mask``; falls back to the grid's own mask."""
    if mask is None:
        return grid.valid_bits()
    if not isinstance(mask, ValidityMask):
        mask = ValidityMask(np.atleast_2d(mask))
    check_same_shape(grid, mask)
    return mask.bits


# -- PFM ---------------------------------------------------------------------

_PFM_HEADER = re.compile(rb"\A(P[Ff])\s+(\d+)\s+(\d+)\s+(\S+)\s")


def read_pfm(data: bytes, unit: Unit = Unit.DIMENSIONLESS) -> tuple[Grid2D, float]:
    """Decode a grayscale PFM. Returns the grid (top-left origin) and the header scale."""
    m = _PFM_HEADER.match(data)
    if m is None:
        raise PfmError("malformed PFM header")
    kind, w, h, scale_text = m.groups()
    if kind == b"PF":
        raise PfmError("unsupported channel count: color (PF) maps are not supported")
    width, height = int(w), int(h)
    if width <= 0 or height <= 0:
        raise PfmError(f"invalid PFM dimensions {width}x{height}")
    try:
        scale = float(scale_text)
    except ValueError as exc:
        raise PfmError(f"invalid PFM scale {scale_text!r}") from exc
    if scale == 0.0 or not np.isfinite(scale):
        raise PfmError("PFM scale must be finite and nonzero")
    payload = data[m.end():]
    expected = 4 * width * height
    if len(payload) != expected:
        raise PfmError(f"payload holds {len(payload)} bytes, expected {expected} for {width}x{height}")
    dtype = "<f4" if scale < 0 else ">f4"
    rows = np.frombuffer(payload, dtype=dtype).reshape(height, width)
    return Grid2D(np.flipud(rows), unit), scale


def write_pfm(grid: Grid2D) -> bytes:
    values = grid.values
    if not np.all(np.isfinite(values)):
        raise PfmError("cannot write non-finite values to PFM")
    header = f"Pf\n{grid.width} {grid.height}\n-1.0\n".encode("ascii")
    return header + np.ascontiguousarray(np.flipud(values)).astype("<f4").tobytes()


# -- PLY ---------------------------------------------------------------------

def _fmt(v: float) -> str:
    s = repr(float(v))
    return s[:-2] if s.endswith(".0") else s


def write_ply_ascii(cloud: PointCloud) -> bytes:
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(cloud)}",
        "property double x",
        "property double y",
        "property double z",
        "end_header",
    ]
    lines.extend(" ".join(_fmt(c) for c in p) for p in cloud.points)
    return ("\n".join(lines) + "\n").encode("ascii")
