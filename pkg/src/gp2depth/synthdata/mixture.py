"""Equal-probability sampling over a mixture of datasets."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ..rng import SplitMix64
from .scenes import ToyScene


class EmptyDatasetError(ValueError):
    pass


@dataclass(frozen=True)
class MixtureSpec:
    datasets: tuple[tuple[str, tuple[ToyScene, ...]], ...]

    def __init__(self, datasets: Sequence[tuple[str, Sequence[ToyScene]]]):
        frozen = tuple((str(name), tuple(scenes)) for name, scenes in datasets)
        if not frozen:
            raise EmptyDatasetError("mixture has no datasets")
        for name, scenes in frozen:
            if not scenes:
                raise EmptyDatasetError(f"dataset {name!r} is empty")
        object.__setattr__(self, "datasets", frozen)

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self.datasets]


def draw_index(spec: MixtureSpec, rng: SplitMix64) -> tuple[int, int]:
    """Dataset uniformly, then a scene uniformly within it."""
    i = rng.integers(len(spec.datasets))
    j = rng.integers(len(spec.datasets[i][1]))
    return i, j


def sample_mixture(spec: MixtureSpec, rng: SplitMix64) -> ToyScene:
    i, j = draw_index(spec, rng)
    return spec.datasets[i][1][j]
