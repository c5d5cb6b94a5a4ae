"""Left-right consistency masking and frame acceptance for stereo disparity.

Disparities are in pixels with the positive convention: left pixel ``(u, v)``
corresponds to right pixel ``(u - dL, v)``. Lookups are nearest-neighbour
with round-half-up.
"""

from __future__ import annotations

import numpy as np

from ..depthcore import Grid2D, Unit, ValidityMask, as_grid, check_same_shape, resolve_mask

MAX_DISCREPANCY = 8.0
MIN_VALID_FRACTION = 0.8
MIN_RANGE = 8.0


def _consistency(src: np.ndarray, other: np.ndarray, direction: int, max_discrepancy: float) -> np.ndarray:
    h, w = src.shape
    finite = np.isfinite(src)
    step = np.floor(np.where(finite, src, 0.0) + 0.5).astype(np.int64)
    u = np.arange(w)[None, :]
    target = u + direction * step
    inside = finite & (target >= 0) & (target < w)
    rows = np.broadcast_to(np.arange(h)[:, None], (h, w))
    looked = other[rows, np.clip(target, 0, w - 1)]
    with np.errstate(invalid="ignore"):
        agree = np.abs(src - looked) < max_discrepancy
    return inside & agree


def lr_consistency_mask(disp_left: Grid2D, disp_right: Grid2D,
                        max_discrepancy: float = MAX_DISCREPANCY) -> ValidityMask:
    """Left-anchored mask: valid iff the matched right pixel reports a disparity within the threshold."""
    dl = as_grid(disp_left, Unit.DIMENSIONLESS)
    dr = as_grid(disp_right, Unit.DIMENSIONLESS)
    check_same_shape(dl, dr)
    return ValidityMask(_consistency(dl.values, dr.values, -1, max_discrepancy))


def rl_consistency_mask(disp_right: Grid2D, disp_left: Grid2D,
                        max_discrepancy: float = MAX_DISCREPANCY) -> ValidityMask:
    """Right-anchored counterpart: right pixel ``(u, v)`` looks up left pixel ``(u + dR, v)``."""
    dr = as_grid(disp_right, Unit.DIMENSIONLESS)
    dl = as_grid(disp_left, Unit.DIMENSIONLESS)
    check_same_shape(dl, dr)
    return ValidityMask(_consistency(dr.values, dl.values, +1, max_discrepancy))


def stereo_verdict(disp: Grid2D, mask, min_valid_fraction: float = MIN_VALID_FRACTION,
                   min_range: float = MIN_RANGE) -> str:
    """``"accepted"``, ``"rejected: validity"`` or ``"rejected: range"`` (validity checked first)."""
    disp = as_grid(disp, Unit.DIMENSIONLESS)
    bits = resolve_mask(disp, mask)
    if not bits.any() or not bits.mean() > min_valid_fraction:
        return "rejected: validity"
    vals = disp.values[bits]
    if not (vals.max() - vals.min()) > min_range:
        return "rejected: range"
    return "accepted"


def accept_stereo_frame(disp: Grid2D, mask, min_valid_fraction: float = MIN_VALID_FRACTION,
                        min_range: float = MIN_RANGE) -> bool:
    return stereo_verdict(disp, mask, min_valid_fraction, min_range) == "accepted"


def synthetic_stereo_pair(height: int, width: int, background: int, foreground: int,
                          rect: tuple[int, int, int, int]) -> tuple[Grid2D, Grid2D]:
    """Fronto-parallel background plus a nearer rectangle, rendered into both views.

    ``rect = (u0, v0, u1, v1)`` is the foreground's half-open extent in the
    left image; in the right image it appears shifted left by ``foreground``.
    """
    if foreground <= background:
        raise ValueError("foreground must be nearer (larger disparity) than background")
    u0, v0, u1, v1 = rect
    left = np.full((height, width), float(background))
    left[v0:v1, u0:u1] = foreground
    right = np.full((height, width), float(background))
    right[v0:v1, max(u0 - foreground, 0):max(u1 - foreground, 0)] = foreground
    return Grid2D(left), Grid2D(right)
