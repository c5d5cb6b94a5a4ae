"""Per-pixel log-depth regressor with hand-written reverse-mode gradients, and its training loop.

The regressor sees the 3x3 neighbourhood of all feature channels around a
pixel (edges use clamped padding), flattened in (dy, dx, channel) order,
and maps it through ``27 -> 32 -> 32 -> 1`` affine layers with tanh between.
All parameters live in one flat float64 vector; the layer matrices are views.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .depthcore import Grid2D, SupervisionClass, Unit
from .losses import LossValueGrad, NonGenericPointError, central_differences, mixture_loss, relative_errors, utss_loss, uts_loss
from .rng import SplitMix64, derive_seed
from .synthdata.mixture import MixtureSpec, draw_index
from .synthdata.scenes import ToyScene

log = logging.getLogger(__name__)

PATCH = 3
CHANNELS = 3
LAYER_SIZES = (PATCH * PATCH * CHANNELS, 32, 32, 1)


class DivergenceError(RuntimeError):
    pass


def _layer_shapes(sizes=LAYER_SIZES):
    return [((a, b), (b,)) for a, b in zip(sizes[:-1], sizes[1:])]


def parameter_count(sizes=LAYER_SIZES) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def extract_patches(features: np.ndarray) -> np.ndarray:
    """``(H*W, 9*C)`` matrix of clamped 3x3 neighbourhoods, rows in row-major pixel order."""
    h, w, c = features.shape
    r = PATCH // 2
    padded = np.pad(features, ((r, r), (r, r), (0, 0)), mode="edge")
    cols = [padded[dy:dy + h, dx:dx + w, :] for dy in range(PATCH) for dx in range(PATCH)]
    return np.concatenate(cols, axis=-1).reshape(h * w, PATCH * PATCH * c)


class ToyRegressor:
    def __init__(self, params: np.ndarray | None = None, sizes=LAYER_SIZES):
        self.sizes = tuple(sizes)
        n = parameter_count(self.sizes)
        self.params = np.zeros(n) if params is None else np.array(params, dtype=np.float64)
        if self.params.shape != (n,):
            raise ValueError(f"expected {n} parameters, got {self.params.shape}")

    @classmethod
    def initialized(cls, seed: int, sizes=LAYER_SIZES) -> "ToyRegressor":
        """Uniform init in ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` for weights and biases."""
        rng = SplitMix64(seed)
        chunks = []
        for (wshape, bshape) in _layer_shapes(sizes):
            s = 1.0 / np.sqrt(wshape[0])
            chunks.append(rng.uniform(-s, s, wshape[0] * wshape[1]))
            chunks.append(rng.uniform(-s, s, bshape[0]))
        return cls(np.concatenate(chunks), sizes)

    def layers(self, params: np.ndarray | None = None):
        p = self.params if params is None else params
        out, k = [], 0
        for (wshape, bshape) in _layer_shapes(self.sizes):
            nw = wshape[0] * wshape[1]
            out.append((p[k:k + nw].reshape(wshape), p[k + nw:k + nw + bshape[0]]))
            k += nw + bshape[0]
        return out

    def forward_patches(self, x: np.ndarray, params: np.ndarray | None = None):
        acts = [x]
        layers = self.layers(params)
        for i, (w, b) in enumerate(layers[:-1]):
            acts.append(np.tanh(acts[-1] @ w + b))
        w, b = layers[-1]
        # BLAS matrix-vector kernels treat tail rows differently; a row-wise
        # reduction keeps each pixel's output independent of its batch position
        acts.append(np.einsum("ij,jk->ik", acts[-1], w) + b)
        return acts[-1][:, 0], acts

    def backward_patches(self, acts, dy: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        layers = self.layers(params)
        grads = []
        delta = dy.reshape(-1, 1)
        for i in range(len(layers) - 1, -1, -1):
            w, _ = layers[i]
            grads.append((acts[i].T @ delta, delta.sum(axis=0)))
            if i > 0:
                delta = (delta @ w.T) * (1.0 - acts[i] ** 2)
        flat = []
        for gw, gb in reversed(grads):
            flat.append(gw.ravel())
            flat.append(gb)
        return np.concatenate(flat)

    # -- checkpoints -----------------------------------------------------------

    def to_json(self) -> dict:
        layers = []
        for i, (w, b) in enumerate(self.layers()):
            layers.append({"name": f"dense{i}", "weight_shape": list(w.shape),
                           "weight": w.ravel().tolist(), "bias": b.tolist()})
        return {"architecture": "patch3x3-mlp", "activation": "tanh",
                "input": "3x3 clamped patch, (dy, dx, channel) order",
                "parameter_count": int(self.params.size), "layers": layers}

    @classmethod
    def from_json(cls, d: dict) -> "ToyRegressor":
        sizes = [d["layers"][0]["weight_shape"][0]] + [layer["weight_shape"][1] for layer in d["layers"]]
        flat = []
        for layer in d["layers"]:
            flat.extend(layer["weight"])
            flat.extend(layer["bias"])
        return cls(np.array(flat, dtype=np.float64), tuple(sizes))


def _pixel_index(scene: ToyScene, pixels) -> np.ndarray:
    return scene.mask.indices() if pixels is None else np.asarray(pixels, dtype=np.int64)


def forward(model: ToyRegressor, scene: ToyScene) -> Grid2D:
    """Log-depth prediction for every pixel of the scene."""
    h, w = scene.shape
    y, _ = model.forward_patches(extract_patches(scene.features))
    return Grid2D(y.reshape(h, w), Unit.LOG_DEPTH, scene.mask)


def backward(model: ToyRegressor, scene: ToyScene, loss_grad: LossValueGrad, pixels=None) -> np.ndarray:
    """Parameter gradient of ``loss o forward``.

    ``loss_grad.grad`` is ordered like the valid pixels of ``loss_grad.bits``
    (raster losses) or like ``pixels`` (flat pixel indices, vector losses).
    """
    if loss_grad.bits is not None and pixels is None:
        idx = np.flatnonzero(loss_grad.bits)
    else:
        idx = _pixel_index(scene, pixels)
    if idx.size != loss_grad.grad.size:
        raise ValueError(f"loss gradient covers {loss_grad.grad.size} pixels, expected {idx.size}")
    x = extract_patches(scene.features)[idx]
    _, acts = model.forward_patches(x)
    return model.backward_patches(acts, loss_grad.grad)


def scene_loss(scene: ToyScene, y: np.ndarray, idx: np.ndarray, kind: str = "mixture") -> LossValueGrad:
    target = scene.target.values.ravel()[idx]
    if kind == "mixture":
        return mixture_loss(y, target, None, scene.cls)
    if kind == "uts":
        if not scene.cls.uses_uts_term:
            raise ValueError("the UTS loss needs a depth target (ABSOLUTE or UTS scene)")
        return uts_loss(y, target)
    if kind == "utss":
        return utss_loss(y, 1.0 / target if scene.cls.uses_uts_term else target)
    raise ValueError(f"unknown loss kind {kind!r}")


def model_gradcheck(model: ToyRegressor, scene: ToyScene, kind: str, n_params: int = 50,
                    h: float = 1e-5, seed: int = 0, pixels=None, max_attempts: int = 10,
                    jitter: float = 1e-3) -> float:
    """Max relative error of backprop against central differences on random parameters.

    If a probe crosses a kink of the loss the parameters are jittered and the
    check restarts, as in :func:`gp2depth.losses.finite_diff_check`.
    """
    idx = _pixel_index(scene, pixels)
    x = extract_patches(scene.features)[idx]
    rng = SplitMix64(seed)
    coords = rng.choice_without_replacement(model.params.size, min(n_params, model.params.size))
    params = model.params.copy()

    def fn(p):
        y, _ = model.forward_patches(x, p)
        res = scene_loss(scene, y, idx, kind)
        return res.value, res.active_set

    for _ in range(max_attempts):
        y, acts = model.forward_patches(x, params)
        res = scene_loss(scene, y, idx, kind)
        analytic = model.backward_patches(acts, res.grad, params)
        numeric = central_differences(fn, params, coords, h, res.active_set)
        if numeric is not None:
            return float(relative_errors(analytic[coords], numeric).max())
        params = params + jitter * rng.normal(params.size)
    raise NonGenericPointError(f"no generic parameter point after {max_attempts} attempts")


# -- training ------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.01
    momentum: float = 0.9
    steps: int = 1500
    batch: int = 4
    pixels_per_scene: int = 1024
    seed: int = 0

    def __post_init__(self):
        if not (self.lr > 0 and 0 <= self.momentum < 1 and self.steps > 0 and self.batch > 0
                and self.pixels_per_scene > 1):
            raise ValueError(f"invalid training configuration {self}")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainLog:
    steps: list[int] = field(default_factory=list)
    loss: list[float] = field(default_factory=list)
    uts_fraction: list[float] = field(default_factory=list)

    def rows(self):
        return zip(self.steps, self.loss, self.uts_fraction)

    def trailing_trend(self, window: int = 100) -> float | None:
        """Mean loss of the last ``window`` steps minus that of the ``window`` before."""
        if len(self.loss) < 2 * window:
            return None
        a = np.mean(self.loss[-2 * window:-window])
        b = np.mean(self.loss[-window:])
        return float(b - a)


def train(mixture: MixtureSpec, cfg: TrainConfig, model: ToyRegressor | None = None):
    """SGD with momentum on the batch-averaged mixture loss. Deterministic per ``cfg.seed``."""
    model = ToyRegressor.initialized(derive_seed(cfg.seed, "init")) if model is None else model
    rng = SplitMix64(derive_seed(cfg.seed, "train"))
    patches: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}
    velocity = np.zeros_like(model.params)
    history = TrainLog()
    for step in range(cfg.steps):
        grad = np.zeros_like(model.params)
        total = 0.0
        n_uts = 0
        for _ in range(cfg.batch):
            key = draw_index(mixture, rng)
            scene = mixture.datasets[key[0]][1][key[1]]
            if key not in patches:
                patches[key] = (extract_patches(scene.features), scene.mask.indices())
            x_all, valid = patches[key]
            m = min(cfg.pixels_per_scene, valid.size)
            idx = valid[np.sort(rng.choice_without_replacement(valid.size, m))]
            y, acts = model.forward_patches(x_all[idx])
            if not np.all(np.abs(y) < 700.0):
                # exp(-y) would overflow inside the loss
                raise DivergenceError(f"prediction left the representable log-depth range at step {step}")
            res = scene_loss(scene, y, idx)
            grad += model.backward_patches(acts, res.grad)
            total += res.value
            n_uts += scene.cls.uses_uts_term
        grad /= cfg.batch
        loss = total / cfg.batch
        if not (np.isfinite(loss) and np.all(np.isfinite(grad))):
            raise DivergenceError(f"non-finite loss or gradient at step {step}")
        velocity = cfg.momentum * velocity + grad
        model.params -= cfg.lr * velocity
        history.steps.append(step)
        history.loss.append(loss)
        history.uts_fraction.append(n_uts / cfg.batch)
    log.debug("trained %d steps, final loss %.4f", cfg.steps, history.loss[-1])
    return model, history


def save_checkpoint(model: ToyRegressor, path) -> None:
    with open(path, "w") as f:
        json.dump(model.to_json(), f, sort_keys=True)
        f.write("\n")


def load_checkpoint(path) -> ToyRegressor:
    with open(path) as f:
        return ToyRegressor.from_json(json.load(f))


__all__ = [
    "DivergenceError",
    "SupervisionClass",
    "ToyRegressor",
    "TrainConfig",
    "TrainLog",
    "backward",
    "extract_patches",
    "forward",
    "load_checkpoint",
    "model_gradcheck",
    "parameter_count",
    "save_checkpoint",
    "train",
]
