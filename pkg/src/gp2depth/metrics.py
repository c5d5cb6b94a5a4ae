"""Depth and point-cloud evaluation metrics, plus the scale-aligned UTS evaluation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .alignment import DegenerateError, lsq_shift_scale, scale_align_depth
from .depthcore import CameraIntrinsics, GridError, PointCloud, Unit, as_grid, check_same_shape, require_positive, resolve_mask
from .geometry import unproject


@dataclass(frozen=True)
class MetricReport:
    delta_error: float
    rel: float
    cloud_rmse: float
    shift_indicator: float

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def mean(cls, reports) -> "MetricReport":
        reports = list(reports)
        if not reports:
            raise ValueError("no reports to average")
        return cls(*(float(np.mean([getattr(r, f) for r in reports])) for f in
                     ("delta_error", "rel", "cloud_rmse", "shift_indicator")))


def _depth_pair(pred, gt, mask):
    pred = as_grid(pred, Unit.DEPTH)
    gt = as_grid(gt, Unit.DEPTH)
    check_same_shape(pred, gt)
    bits = resolve_mask(gt, mask)
    if not bits.any():
        raise DegenerateError("empty mask")
    return pred.values[bits], gt.values[bits], bits


def delta_error(pred, gt, mask=None, threshold: float = 1.25) -> float:
    """Fraction of valid pixels with ``max(pred/gt, gt/pred) > threshold`` (lower is better)."""
    p, g, bits = _depth_pair(pred, gt, mask)
    if not (np.all(p > 0) and np.all(g > 0)):
        raise DegenerateError("delta error needs positive depths on the mask")
    # multiply instead of dividing so pred == threshold * gt sits exactly on the boundary
    exceeded = (p > threshold * g) | (g > threshold * p)
    return float(exceeded.mean())


def rel_error(pred, gt, mask=None) -> float:
    p, g, bits = _depth_pair(pred, gt, mask)
    if not np.all(g > 0):
        raise DegenerateError("relative error needs positive ground truth on the mask")
    return float(np.mean(np.abs(p - g) / g))


def cloud_rmse(pred: PointCloud, gt: PointCloud) -> float:
    """Pointwise RMSE between clouds paired by source pixel (or by position when unlabelled)."""
    if len(pred) != len(gt):
        raise GridError(f"cloud sizes differ: {len(pred)} vs {len(gt)}")
    if len(pred) == 0:
        raise DegenerateError("empty clouds")
    p = pred.points
    if pred.source is not None and gt.source is not None:
        if not np.array_equal(pred.source, gt.source):
            lookup = {tuple(s): i for i, s in enumerate(pred.source.tolist())}
            try:
                order = [lookup[tuple(s)] for s in gt.source.tolist()]
            except KeyError as exc:
                raise GridError(f"ground-truth pixel {exc.args[0]} has no predicted point") from exc
            p = p[order]
    d = p - gt.points
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))


def evaluate_uts(pred_log, gt_depth, mask, cam: CameraIntrinsics) -> MetricReport:
    """Scale-align a log-depth prediction, then score depth, cloud and shift.

    The shift indicator is ``|shift|`` of the least-squares fit of ground-truth
    disparity against predicted disparity; it is expressed in ground-truth
    disparity units, so it does not depend on the prediction's free scale.
    """
    gt_depth = as_grid(gt_depth, Unit.DEPTH)
    bits = resolve_mask(gt_depth, mask)
    require_positive(gt_depth.values, bits, "ground-truth depth")
    aligned = scale_align_depth(pred_log, gt_depth, bits)
    fit = lsq_shift_scale(1.0 / aligned.values, 1.0 / np.where(bits, gt_depth.values, 1.0), bits)
    return MetricReport(
        delta_error=delta_error(aligned, gt_depth, bits),
        rel=rel_error(aligned, gt_depth, bits),
        cloud_rmse=cloud_rmse(unproject(aligned, bits, cam), unproject(gt_depth, bits, cam)),
        shift_indicator=abs(fit.shift),
    )
