from .mixture import EmptyDatasetError, MixtureSpec, draw_index, sample_mixture
from .scenes import (
    CorruptionError,
    SceneConfig,
    SceneConfigError,
    ToyScene,
    as_absolute,
    generate_scene,
    make_uts,
    make_utss,
)
from .storage import load_scene, save_scene
from .stereo import (
    accept_stereo_frame,
    lr_consistency_mask,
    rl_consistency_mask,
    stereo_verdict,
    synthetic_stereo_pair,
)

__all__ = [
    "CorruptionError",
    "EmptyDatasetError",
    "MixtureSpec",
    "SceneConfig",
    "SceneConfigError",
    "ToyScene",
    "accept_stereo_frame",
    "as_absolute",
    "draw_index",
    "generate_scene",
    "load_scene",
    "lr_consistency_mask",
    "make_uts",
    "make_utss",
    "rl_consistency_mask",
    "sample_mixture",
    "save_scene",
    "stereo_verdict",
    "synthetic_stereo_pair",
]
