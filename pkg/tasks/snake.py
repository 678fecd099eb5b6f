"""
Broken Snake Task
Self-avoiding pixel paths, optionally broken by a single-pixel gap, and the
algebraic connectivity detector built on conformal distances.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from core.algebra import CL41, scalar_product_array
from core.conformal import lift_array
from core.errors import SnakeGenerationError

logger = logging.getLogger(__name__)

NEIGHBOURS = np.array([(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)])

# Integer steps: adjacent pixels give d² in {1, 2}, any gap gives d² >= 4.
CONNECTIVITY_THRESHOLD = 3.0

MIN_GRID = 8


class SnakeLabel(Enum):
    CONNECTED = "connected"
    BROKEN = "broken"


@dataclass
class SnakeSample:
    grid: int
    path: np.ndarray
    label: SnakeLabel
    gap_index: Optional[int] = None

    def __post_init__(self):
        self.path = np.asarray(self.path, dtype=np.int64).reshape(-1, 2)
        if isinstance(self.label, str):
            self.label = SnakeLabel(self.label)
        steps = max_norm_steps(self.path)
        jumps = np.flatnonzero(steps > 1)
        if len(jumps) > 1:
            raise ValueError("A snake has at most one gap")
        if (len(jumps) == 1) != (self.label is SnakeLabel.BROKEN):
            raise ValueError("Label does not match the path's gaps")
        if self.label is SnakeLabel.BROKEN and self.gap_index != int(jumps[0]) + 1:
            raise ValueError("gap_index does not point at the jump")

    def to_record(self) -> Dict[str, Any]:
        return {
            "grid": self.grid,
            "path": self.path,
            "label": self.label.value,
            "gap_index": self.gap_index,
        }

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> "SnakeSample":
        return cls(grid=int(record["grid"]), path=record["path"],
                   label=SnakeLabel(record["label"]), gap_index=record.get("gap_index"))


def max_norm_steps(path: np.ndarray) -> np.ndarray:
    if len(path) < 2:
        return np.zeros(0, dtype=np.int64)
    return np.max(np.abs(np.diff(path, axis=0)), axis=-1)


def _grow_walk(rng: np.random.Generator, grid: int, length: int) -> Optional[np.ndarray]:
    start = rng.integers(0, grid, size=2)
    path = [tuple(start)]
    visited = {path[0]}
    while len(path) < length:
        r, c = path[-1]
        options = [(r + dr, c + dc) for dr, dc in NEIGHBOURS
                   if 0 <= r + dr < grid and 0 <= c + dc < grid and (r + dr, c + dc) not in visited]
        if not options:
            return None
        step = options[rng.integers(len(options))]
        path.append(step)
        visited.add(step)
    return np.array(path, dtype=np.int64)


def gen_snake(grid: int, broken: bool, seed: Union[int, np.random.SeedSequence] = 0,
              max_retries: int = 200) -> SnakeSample:
    """Self-avoiding 8-connected walk of at least ``grid`` pixels; one interior pixel removed if broken."""
    if grid < MIN_GRID:
        raise ValueError(f"Grid side must be at least {MIN_GRID}, got {grid}")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        length = grid + int(rng.integers(1, grid + 1))
        path = _grow_walk(rng, grid, length)
        if path is None:
            continue
        if not broken:
            return SnakeSample(grid, path, SnakeLabel.CONNECTED)
        # removing pixel k joins k-1 to k+1; keep only removals that open a real gap
        skip = np.max(np.abs(path[2:] - path[:-2]), axis=-1)
        candidates = np.flatnonzero(skip >= 2) + 1
        if len(candidates) == 0:
            continue
        k = int(candidates[rng.integers(len(candidates))])
        return SnakeSample(grid, np.delete(path, k, axis=0), SnakeLabel.BROKEN, gap_index=k)
    raise SnakeGenerationError(f"Could not grow a snake on a {grid}x{grid} grid in {max_retries} tries")


def snake_connectivity_algebraic(sample: SnakeSample) -> SnakeLabel:
    """Broken iff some consecutive pair of lifted pixels is farther apart than a neighbour."""
    if len(sample.path) == 0:
        raise ValueError("Snake path is empty")
    if len(sample.path) == 1:
        return SnakeLabel.CONNECTED
    X = lift_array(sample.path.astype(np.float64))
    # X_i . X_j = -d²/2
    d2 = -2.0 * scalar_product_array(X[:-1], X[1:], CL41)
    return SnakeLabel.BROKEN if np.any(d2 > CONNECTIVITY_THRESHOLD) else SnakeLabel.CONNECTED


def generate_snake_dataset(grids: Sequence[int], n_per_grid: int, seed: int = 0,
                           broken_fraction: float = 0.5, max_retries: int = 200) -> List[SnakeSample]:
    samples = []
    children = np.random.SeedSequence(seed).spawn(len(grids) * n_per_grid)
    for k, child in enumerate(children):
        grid = grids[k // n_per_grid]
        broken = np.random.default_rng(child.spawn(1)[0]).random() < broken_fraction
        samples.append(gen_snake(grid, bool(broken), child, max_retries))
    logger.info(f"Generated {len(samples)} snake samples over grids {list(grids)}")
    return samples
