"""Procedural obstacle scenes: random rectangular blocks on a grid."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .geometry import GridSpec, ObstacleMap


@dataclass(frozen=True)
class SceneConfig:
    density: float = 0.3
    height_range: Tuple[float, float] = (10.0, 60.0)
    block_size: Tuple[int, int] = (2, 6)  # side length range in cells, inclusive

    def __post_init__(self):
        if not 0 <= self.density <= 1:
            raise ValueError("density must lie in [0, 1]")
        lo, hi = self.height_range
        if not 0 < lo <= hi:
            raise ValueError("height_range must satisfy 0 < low <= high")
        a, b = self.block_size
        if not 1 <= a <= b:
            raise ValueError("block_size must satisfy 1 <= low <= high")


def random_block_scene(grid: GridSpec, cfg: SceneConfig = SceneConfig(),
                       rng: np.random.Generator | int = 0) -> ObstacleMap:
    """Drop blocks of uniform random size and height until the covered
    fraction reaches ``cfg.density``.  The last block is trimmed cell by cell
    so coverage never overshoots by more than one cell."""
    rng = np.random.default_rng(rng)
    m1, m2 = grid.shape
    H = np.zeros(grid.shape)
    target = int(round(cfg.density * m1 * m2))
    covered = 0
    lo, hi = cfg.height_range
    while covered < target:
        a, b = rng.integers(cfg.block_size[0], cfg.block_size[1] + 1, size=2)
        i = rng.integers(0, m1)
        j = rng.integers(0, m2)
        h = lo + rng.random() * (hi - lo)
        block = np.zeros(grid.shape, dtype=bool)
        block[i:i + a, j:j + b] = True
        new = block & (H == 0)
        n_new = int(new.sum())
        if covered + n_new > target:
            keep = np.flatnonzero(new.ravel())[: target - covered]
            new = np.zeros(grid.shape, dtype=bool)
            new.ravel()[keep] = True
            block = new | (block & (H > 0))
            n_new = len(keep)
        H[block] = h
        covered += n_new
    return ObstacleMap(grid, H)
