"""On-disk scene layout: one directory per scene.

    feature0.pfm feature1.pfm feature2.pfm   feature channels
    gt_depth.pfm                              ground-truth depth (meters)
    target.pfm                                supervision target (depth or disparity)
    mask.pfm                                  validity as 1.0 / 0.0
    meta.json                                 flat: cls, seed, target_unit, corruption params

Rasters are float32 on disk, so a loaded scene is the float32 rounding of the
generated one; everything downstream of the files is reproducible.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..depthcore import Grid2D, SupervisionClass, Unit, ValidityMask, read_pfm, write_pfm
from .scenes import ToyScene

META_KEYS = ("cls", "seed", "target_unit", "height", "width")


def dump_json(obj, path: Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_scene(scene: ToyScene, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for c in range(scene.features.shape[2]):
        (d / f"feature{c}.pfm").write_bytes(write_pfm(Grid2D(scene.features[:, :, c])))
    (d / "gt_depth.pfm").write_bytes(write_pfm(scene.gt_depth))
    (d / "target.pfm").write_bytes(write_pfm(scene.target))
    (d / "mask.pfm").write_bytes(write_pfm(Grid2D(scene.mask.bits.astype(np.float64))))
    h, w = scene.shape
    meta = {"cls": scene.cls.value, "seed": scene.seed, "target_unit": scene.target.unit.value,
            "height": h, "width": w}
    meta.update(scene.corruption)
    dump_json(meta, d / "meta.json")
    return d


def _load(path: Path) -> np.ndarray:
    grid, _ = read_pfm(path.read_bytes())
    return grid.values


def load_scene(directory) -> ToyScene:
    d = Path(directory)
    meta = json.loads((d / "meta.json").read_text())
    channels = sorted(d.glob("feature*.pfm"), key=lambda p: int(p.stem[len("feature"):]))
    features = np.stack([_load(p) for p in channels], axis=-1)
    mask = ValidityMask(_load(d / "mask.pfm") > 0.5)
    gt = Grid2D(_load(d / "gt_depth.pfm"), Unit.DEPTH, mask)
    target = Grid2D(_load(d / "target.pfm"), Unit(meta["target_unit"]), mask)
    corruption = {k: v for k, v in meta.items() if k not in META_KEYS}
    return ToyScene(features, gt, target, SupervisionClass(meta["cls"]), mask, int(meta["seed"]), corruption)
