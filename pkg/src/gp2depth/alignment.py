"""Alignment statistics and solvers that make losses and metrics scale/shift invariant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .depthcore import Grid2D, GridError, Unit, as_grid, check_same_shape, require_positive, resolve_mask

EPS_STD = 1e-6


class DegenerateError(ValueError):
    """Statistic undefined: too few valid pixels or (near) constant input."""


@dataclass(frozen=True)
class AlignmentStats:
    mean: float
    std: float
    count: int


@dataclass(frozen=True)
class ShiftScaleFit:
    scale: float
    shift: float
    residual_rms: float


def meanstd(x: np.ndarray) -> tuple[float, float]:
    """Mean and population std of a 1-D sample; raises on degenerate input."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise DegenerateError(f"normalization needs at least 2 valid pixels, got {x.size}")
    mu = float(x.mean())
    sigma = float(np.sqrt(np.mean((x - mu) ** 2)))
    if not sigma >= EPS_STD:
        raise DegenerateError(f"degenerate (constant) input: std {sigma:.3g} < {EPS_STD}")
    return mu, sigma


def median_with_index(x: np.ndarray) -> tuple[float, np.ndarray]:
    """Median and the indices of the middle order statistic(s) it averages."""
    n = x.size
    if n == 0:
        raise DegenerateError("median of an empty set")
    order = np.argsort(x, kind="stable")
    if n % 2:
        mid = order[n // 2: n // 2 + 1]
    else:
        mid = order[n // 2 - 1: n // 2 + 1]
    return float(x[mid].mean()), mid


def _pair(a, b, mask, unit_a=Unit.DIMENSIONLESS, unit_b=Unit.DIMENSIONLESS):
    a = as_grid(a, unit_a)
    b = as_grid(b, unit_b)
    check_same_shape(a, b)
    return a, b, resolve_mask(a, mask)


def normalize_meanstd(g: Grid2D, mask=None) -> tuple[Grid2D, AlignmentStats]:
    g = as_grid(g)
    bits = resolve_mask(g, mask)
    mu, sigma = meanstd(g.values[bits])
    return g.with_values((g.values - mu) / sigma), AlignmentStats(mu, sigma, int(bits.sum()))


def median_log_shift(l: Grid2D, d_star: Grid2D, mask=None) -> float:
    l, d_star, bits = _pair(l, d_star, mask, Unit.LOG_DEPTH, Unit.DEPTH)
    if not bits.any():
        raise DegenerateError("empty mask")
    require_positive(d_star.values, bits, "ground-truth depth")
    return median_with_index(l.values[bits] - np.log(d_star.values[bits]))[0]


def scale_align_depth(pred_log: Grid2D, gt: Grid2D, mask=None) -> Grid2D:
    """Depth ``exp(l - mu)`` whose median log-residual against ``gt`` is zero."""
    mu = median_log_shift(pred_log, gt, mask)
    pred_log = as_grid(pred_log, Unit.LOG_DEPTH)
    return Grid2D(np.exp(pred_log.values - mu), Unit.DEPTH, pred_log.mask)


def lsq_shift_scale(pred_disp: Grid2D, gt_disp: Grid2D, mask=None) -> ShiftScaleFit:
    """Least-squares ``scale * pred + shift ~ gt`` over valid pixels (2x2 normal equations)."""
    pred_disp, gt_disp, bits = _pair(pred_disp, gt_disp, mask)
    x = pred_disp.values[bits]
    y = gt_disp.values[bits]
    return fit_shift_scale(x, y)


def fit_shift_scale(x: np.ndarray, y: np.ndarray) -> ShiftScaleFit:
    n = x.size
    if n < 2:
        raise DegenerateError(f"shift/scale fit needs at least 2 valid pixels, got {n}")
    # centered form of the 2x2 normal equations; avoids cancellation in n*sxx - sx^2
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    sxx = dx @ dx
    if not sxx > 1e-24 * n * max(1.0, xm * xm):
        raise DegenerateError("singular normal matrix: prediction is constant on the mask")
    scale = (dx @ (y - ym)) / sxx
    shift = ym - scale * xm
    resid = scale * x + shift - y
    return ShiftScaleFit(float(scale), float(shift), float(np.sqrt(np.mean(resid**2))))


__all__ = [
    "AlignmentStats",
    "DegenerateError",
    "EPS_STD",
    "GridError",
    "ShiftScaleFit",
    "fit_shift_scale",
    "lsq_shift_scale",
    "meanstd",
    "median_log_shift",
    "median_with_index",
    "normalize_meanstd",
    "scale_align_depth",
]
