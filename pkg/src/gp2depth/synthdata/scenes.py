"""Seeded piecewise-planar toy scenes and their UTS / UTSS corruptions."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..depthcore import Grid2D, SupervisionClass, Unit, ValidityMask
from ..rng import SplitMix64, derive_seed

UTS_SCALE_RANGE = (0.25, 4.0)
UTSS_SCALE_RANGE = (0.25, 4.0)
UTSS_SHIFT_RANGE = (-0.05, 0.5)
UTSS_MIN_TARGET = 0.01
UTSS_MAX_DRAWS = 100


class SceneConfigError(ValueError):
    pass


class CorruptionError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    height: int = 64
    width: int = 64
    region_grid: tuple[int, int] = (2, 2)
    depth_range: tuple[float, float] = (1.0, 10.0)
    noise_sigma: float = 0.2
    gamma: float = 0.75
    # max relative disparity change across the image width/height within one plane
    slope: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "region_grid", tuple(int(g) for g in self.region_grid))
        object.__setattr__(self, "depth_range", tuple(float(d) for d in self.depth_range))
        if self.height < 16 or self.width < 16:
            raise SceneConfigError("scenes must be at least 16x16")
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise SceneConfigError(f"depth range must satisfy 0 < min < max, got {self.depth_range}")
        gy, gx = self.region_grid
        if gy < 1 or gx < 1 or gy > self.height // 4 or gx > self.width // 4:
            raise SceneConfigError(f"invalid region grid {self.region_grid}")
        if self.noise_sigma < 0 or self.gamma <= 0 or not 0 <= self.slope < 1:
            raise SceneConfigError("noise_sigma >= 0, gamma > 0 and 0 <= slope < 1 required")

    @classmethod
    def from_dict(cls, d: dict) -> "SceneConfig":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ToyScene:
    features: np.ndarray
    gt_depth: Grid2D
    target: Grid2D
    cls: SupervisionClass
    mask: ValidityMask
    seed: int
    corruption: dict = field(default_factory=dict)

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64, copy=True)
        if feats.ndim != 3 or feats.shape[:2] != self.gt_depth.values.shape:
            raise SceneConfigError("features must be (height, width, channels) matching the depth grid")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "cls", SupervisionClass(self.cls))

    @property
    def shape(self) -> tuple[int, int]:
        return self.gt_depth.values.shape


def _boundaries(n: int, parts: int, rng: SplitMix64) -> np.ndarray:
    step = n / parts
    inner = np.arange(1, parts) * step + rng.uniform(-0.25, 0.25, parts - 1) * step
    return np.concatenate([[0], np.rint(inner).astype(np.int64), [n]])


def _draw_depth(cfg: SceneConfig, rng: SplitMix64):
    h, w = cfg.height, cfg.width
    gy, gx = cfg.region_grid
    rows = _boundaries(h, gy, rng)
    cols = _boundaries(w, gx, rng)
    lo, hi = cfg.depth_range
    v, u = np.mgrid[0:h, 0:w].astype(np.float64)
    disp = np.empty((h, w))
    region = np.empty((h, w), dtype=np.int64)
    k = 0
    for i in range(gy):
        for j in range(gx):
            sl = (slice(rows[i], rows[i + 1]), slice(cols[j], cols[j + 1]))
            center_depth = float(rng.log_uniform(lo, hi))
            gu, gv = rng.uniform(-cfg.slope, cfg.slope, 2)
            uc = 0.5 * (cols[j] + cols[j + 1] - 1)
            vc = 0.5 * (rows[i] + rows[i + 1] - 1)
            disp[sl] = (1.0 + gu * (u[sl] - uc) / w + gv * (v[sl] - vc) / h) / center_depth
            region[sl] = k
            k += 1
    depth = 1.0 / np.clip(disp, 1.0 / hi, 1.0 / lo)
    return depth, region


def generate_scene(config: SceneConfig, seed: int) -> ToyScene:
    """Piecewise affine-disparity depth with features that determine depth up to noise.

    Channel 0 is ``disparity**gamma`` plus noise, channel 1 the normalised
    column ``u / W`` and channel 2 a per-region texture value plus noise.
    """
    cfg = config if isinstance(config, SceneConfig) else SceneConfig.from_dict(config)
    rng = SplitMix64(seed)
    for _ in range(100):
        depth, region = _draw_depth(cfg, rng)
        if np.std(np.log(depth)) > 1e-3:
            break
    else:
        raise SceneConfigError("could not draw a non-constant depth map")
    h, w = depth.shape
    texture = rng.random(int(region.max()) + 1)
    noise = rng.normal(2 * h * w).reshape(2, h, w) * cfg.noise_sigma
    u = np.broadcast_to(np.arange(w, dtype=np.float64) / w, (h, w))
    features = np.stack([(1.0 / depth) ** cfg.gamma + noise[0], u, texture[region] + noise[1]], axis=-1)
    gt = Grid2D(depth, Unit.DEPTH)
    return ToyScene(features, gt, gt, SupervisionClass.ABSOLUTE, ValidityMask.all_valid(w, h), int(seed))


def as_absolute(scene: ToyScene) -> ToyScene:
    """The uncorrupted scene: ground truth as target, class ABSOLUTE."""
    return replace(scene, target=scene.gt_depth, cls=SupervisionClass.ABSOLUTE, corruption={})


def _require_absolute(scene: ToyScene) -> None:
    if scene.cls is not SupervisionClass.ABSOLUTE:
        raise CorruptionError(f"corruption expects an ABSOLUTE scene, got {scene.cls.value}")


def make_uts(scene: ToyScene, seed: int, k: float | None = None) -> ToyScene:
    """Depth target multiplied by a random positive factor (log-uniform on [1/4, 4])."""
    _require_absolute(scene)
    if k is None:
        k = float(SplitMix64(derive_seed(seed, "uts")).log_uniform(*UTS_SCALE_RANGE))
    if not k > 0:
        raise CorruptionError("UTS factor must be positive")
    target = Grid2D(k * scene.gt_depth.values, Unit.DEPTH, scene.mask)
    return replace(scene, target=target, cls=SupervisionClass.UTS, corruption={"k": k})


def make_utss(scene: ToyScene, seed: int, a: float | None = None, b: float | None = None) -> ToyScene:
    """Disparity target ``a / d + b`` with random ``a > 0`` and shift ``b``.

    Draws are repeated until the target exceeds 0.01 on every valid pixel.
    """
    _require_absolute(scene)
    true_disp = 1.0 / scene.gt_depth.values
    bits = scene.mask.bits
    rng = SplitMix64(derive_seed(seed, "utss"))
    fixed = a is not None or b is not None
    for _ in range(1 if fixed else UTSS_MAX_DRAWS):
        a_k = float(rng.log_uniform(*UTSS_SCALE_RANGE)) if a is None else float(a)
        b_k = float(rng.uniform(*UTSS_SHIFT_RANGE)) if b is None else float(b)
        target = a_k * true_disp + b_k
        if a_k > 0 and target[bits].min() > UTSS_MIN_TARGET:
            grid = Grid2D(target, Unit.DISPARITY, scene.mask)
            return replace(scene, target=grid, cls=SupervisionClass.UTSS, corruption={"a": a_k, "b": b_k})
    raise CorruptionError("could not draw a positive UTSS target")
