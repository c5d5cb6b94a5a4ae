"""Scale-invariant (UTS), shift-and-scale-invariant (UTSS) and mixture losses.

All losses take predicted log-depth ``l`` and return the value together with
the exact gradient with respect to ``l`` on the valid pixels. Gradients go
through the alignment statistics (median, mean, population std) by the full
chain rule; they are exact wherever the loss is differentiable, i.e. away
from median ties and zero L1 residuals. ``sign(0)`` is taken as 0.

Each result also carries an ``active_set`` signature (median indices and
residual signs). Inside a region where the signature is constant the loss is
smooth, which is what :func:`finite_diff_check` relies on.

Inputs are either :class:`~gp2depth.depthcore.Grid2D` rasters with a mask, or
1-D arrays holding the valid pixels already (the training loop uses these).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .alignment import DegenerateError, meanstd, median_with_index
from .depthcore import Grid2D, SupervisionClass, Unit, as_grid, check_same_shape, require_positive, resolve_mask
from .rng import SplitMix64


class NonGenericPointError(RuntimeError):
    """Finite differences kept straddling a kink of the loss."""


@dataclass(frozen=True, eq=False)
class LossValueGrad:
    value: float
    grad: np.ndarray
    bits: np.ndarray | None = None
    active_set: bytes = b""

    def grad_grid(self) -> np.ndarray:
        """Gradient scattered back onto the raster, zero outside the mask."""
        if self.bits is None:
            raise ValueError("loss was evaluated on a pixel vector, not a raster")
        out = np.zeros(self.bits.shape)
        out[self.bits] = self.grad
        return out

    def __add__(self, other: "LossValueGrad") -> "LossValueGrad":
        return LossValueGrad(self.value + other.value, self.grad + other.grad, self.bits,
                             self.active_set + b"|" + other.active_set)


def _valid_vectors(l, target, mask, target_unit):
    """Pull the valid pixels out of (l, target); 1-D arrays pass through."""
    if mask is None and not isinstance(l, Grid2D) and np.ndim(l) == 1:
        lv = np.asarray(l, dtype=np.float64)
        tv = np.asarray(target, dtype=np.float64)
        if lv.shape != tv.shape:
            raise ValueError(f"prediction has {lv.size} pixels, target has {tv.size}")
        return lv, tv, None
    lg = as_grid(l, Unit.LOG_DEPTH)
    tg = as_grid(target, target_unit)
    check_same_shape(lg, tg)
    bits = resolve_mask(lg, mask)
    return lg.values[bits], tg.values[bits], bits


def _uts(l: np.ndarray, log_dstar: np.ndarray):
    n = l.size
    if n == 0:
        raise DegenerateError("empty mask")
    r = l - log_dstar
    mu, mid = median_with_index(r)
    dev = r - mu
    s = np.sign(dev)
    value = float(np.abs(dev).mean())
    # d mu / d r_j: 1 for the middle element (odd n), 1/2 for each of the two (even n)
    grad = s.copy()
    grad[mid] -= s.sum() / mid.size
    grad /= n
    active = mid.astype(np.int64).tobytes() + s.astype(np.int8).tobytes()
    return value, grad, active


def uts_loss(l, d_star, mask=None) -> LossValueGrad:
    """Mean absolute log-residual after removing the median log-residual."""
    lv, dv, bits = _valid_vectors(l, d_star, mask, Unit.DEPTH)
    if lv.size == 0:
        raise DegenerateError("empty mask")
    if not np.all(dv > 0):
        raise DegenerateError("ground-truth depth must be positive on the mask")
    value, grad, active = _uts(lv, np.log(dv))
    return LossValueGrad(value, grad, bits, active)


def _utss(l: np.ndarray, gt_disp: np.ndarray):
    n = l.size
    disp = np.exp(-l)
    mu, sigma = meanstd(disp)
    mu_t, sigma_t = meanstd(gt_disp)
    dhat = (disp - mu) / sigma
    diff = dhat - (gt_disp - mu_t) / sigma_t
    s = np.sign(diff)
    value = float(np.abs(diff).mean())
    g = s / n
    # backprop through (x - mean) / std with population std
    g_disp = (g - g.mean() - dhat * np.mean(g * dhat)) / sigma
    grad = -disp * g_disp
    return value, grad, s.astype(np.int8).tobytes()


def utss_loss(l, gt_disp, mask=None) -> LossValueGrad:
    """Mean absolute difference of mean/std-normalised predicted and target disparity."""
    lv, tv, bits = _valid_vectors(l, gt_disp, mask, Unit.DISPARITY)
    value, grad, active = _utss(lv, tv)
    return LossValueGrad(value, grad, bits, active)


def mixture_loss(l, target, mask=None, cls: SupervisionClass = SupervisionClass.UTSS) -> LossValueGrad:
    """UTSS term for every sample plus the UTS term for ABSOLUTE/UTS samples.

    ``target`` is depth for ABSOLUTE/UTS samples and disparity for UTSS ones.
    """
    cls = SupervisionClass(cls)
    if not cls.uses_uts_term:
        return utss_loss(l, target, mask)
    if isinstance(target, Grid2D):
        bits = resolve_mask(as_grid(l, Unit.LOG_DEPTH), mask)
        require_positive(target.values, bits, "target depth")
        with np.errstate(divide="ignore"):
            disp = target.with_values(1.0 / target.values, Unit.DISPARITY)
    else:
        t = np.asarray(target, dtype=np.float64)
        with np.errstate(divide="ignore"):
            disp = 1.0 / t
    return uts_loss(l, target, mask) + utss_loss(l, disp, mask)


# -- gradient verification -----------------------------------------------------

def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps near-zero partials from dominating."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def central_differences(fn: Callable[[np.ndarray], tuple[float, bytes]], x: np.ndarray,
                        coords, h: float, active: bytes):
    """Central differences of ``fn`` along ``coords``.

    Returns ``None`` when a probe leaves the active set of ``x`` (the
    difference would straddle a kink).
    """
    out = np.empty(len(coords))
    for k, i in enumerate(coords):
        xp = x.copy()
        xp[i] += h
        fp, ap = fn(xp)
        xm = x.copy()
        xm[i] -= h
        fm, am = fn(xm)
        if ap != active or am != active:
            return None
        out[k] = (fp - fm) / (2.0 * h)
    return out


def finite_diff_check(loss: Callable[..., LossValueGrad], l, *args, h: float = 1e-5, mask=None,
                      seed: int = 0, max_attempts: int = 10, jitter: float = 1e-3,
                      corrupt: Callable[[np.ndarray], np.ndarray] | None = None) -> float:
    """Max relative deviation between the analytic gradient of ``loss`` and central differences.

    ``loss(l, *args, mask=...)`` must return a :class:`LossValueGrad`. The
    check runs over the valid pixels of ``l``. If any probe crosses a kink the
    point is jittered and re-sampled; after ``max_attempts`` failures a
    :class:`NonGenericPointError` is raised. ``corrupt`` can tamper with the
    analytic gradient (used to test the checker's sensitivity).
    """
    if isinstance(l, Grid2D) or np.ndim(l) == 2:
        lg = as_grid(l, Unit.LOG_DEPTH)
        bits = resolve_mask(lg, mask)
        base = lg.values.copy()

        def call(vec):
            full = base.copy()
            full[bits] = vec
            return loss(Grid2D(full, Unit.LOG_DEPTH), *args, mask=bits)

        x = base[bits]
    else:
        def call(vec):
            return loss(vec, *args)

        x = np.asarray(l, dtype=np.float64).copy()

    def fn(vec):
        res = call(vec)
        return res.value, res.active_set

    rng = SplitMix64(seed)
    for _ in range(max_attempts):
        res = call(x)
        grad = res.grad if corrupt is None else corrupt(res.grad.copy())
        numeric = central_differences(fn, x, range(x.size), h, res.active_set)
        if numeric is not None:
            return float(relative_errors(grad, numeric).max())
        x = x + jitter * rng.normal(x.size)
    raise NonGenericPointError(f"no generic point found after {max_attempts} attempts")
