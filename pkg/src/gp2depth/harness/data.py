"""Generated dataset layout: ``manifest.json`` plus ``train/NNNN`` and ``test/NNNN`` scene dirs."""

from __future__ import annotations

import json
import math
from pathlib import Path

from ..rng import derive_seed
from ..synthdata import SceneConfig, as_absolute, generate_scene, load_scene, make_uts, make_utss, save_scene
from ..synthdata.storage import dump_json
from .config import validate

MANIFEST = "manifest.json"


class DataError(RuntimeError):
    pass


def scene_config(cfg: dict) -> SceneConfig:
    return SceneConfig.from_dict(cfg["scene"])


def generate_dataset(cfg: dict, out) -> dict:
    """Write all scenes and the manifest; returns the manifest."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from None
    scfg = scene_config(cfg)
    seed = cfg["seed"]
    n_train, n_test = cfg["data"]["n_train"], cfg["data"]["n_test"]
    ratio = cfg["data"]["uts_ratio"]
    n_uts = max(1, math.floor(ratio * n_train + 1e-9))
    entries = []
    for split, count in (("train", n_train), ("test", n_test)):
        for i in range(count):
            scene = generate_scene(scfg, derive_seed(seed, split, i))
            if split == "train":
                scene = make_uts(scene, scene.seed) if i < n_uts else make_utss(scene, scene.seed)
            rel = f"{split}/{i:04d}"
            save_scene(scene, out / rel)
            entries.append({"split": split, "index": i, "seed": scene.seed, "cls": scene.cls.value, "path": rel})
    manifest = {"seed": seed, "scene": cfg["scene"], "n_train": n_train, "n_test": n_test,
                "uts_ratio": ratio, "n_uts": n_uts, "n_utss": n_train - n_uts, "scenes": entries}
    validate(manifest, "manifest")
    dump_json(manifest, out / MANIFEST)
    return manifest


def read_manifest(data_dir) -> dict:
    path = Path(data_dir) / MANIFEST
    if not path.is_file():
        raise DataError(f"no generated data at {data_dir} (missing {MANIFEST}); run gen-data first")
    manifest = json.loads(path.read_text())
    validate(manifest, "manifest")
    return manifest


def load_split(data_dir, split: str, absolute: bool = False) -> list:
    """Scenes of one split in manifest order; ``absolute`` strips the stored corruption."""
    manifest = read_manifest(data_dir)
    entries = sorted((e for e in manifest["scenes"] if e["split"] == split), key=lambda e: e["index"])
    if not entries:
        raise DataError(f"split {split!r} is empty in {data_dir}")
    scenes = []
    for e in entries:
        try:
            scene = load_scene(Path(data_dir) / e["path"])
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot load scene {e['path']}: {exc}") from None
        scenes.append(as_absolute(scene) if absolute else scene)
    return scenes
