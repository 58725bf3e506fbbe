"""
Fixed-capacity voxelization of a painted point cloud.

Each occupied voxel keeps exactly M rows of [x, y, z, sem2d, sem3d]. Voxels
with more than M points are subsampled without replacement; voxels with fewer
repeat their points cyclically. Voxels come out in lexicographic coordinate
order and members in original point order, so the voxel set and each voxel's
candidate points depend only on the point multiset.
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from semfusion.config import DEFAULT_POINTS_PER_VOXEL
from semfusion.errors import DimensionError
from semfusion.semantics import PaintedPointCloud

logger = logging.getLogger(__name__)

SNAP_EPS = 1e-9
MULTIPLE_TOL = 1e-9

Triple = Tuple[float, float, float]


class VoxelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    range_min: Triple
    range_max: Triple
    voxel_size: Triple
    points_per_voxel: int = Field(default=DEFAULT_POINTS_PER_VOXEL, gt=0)
    seed: int = Field(default=0, ge=0, lt=2 ** 64)

    @model_validator(mode="after")
    def _check_extents(self) -> "VoxelConfig":
        for axis in range(3):
            extent = self.range_max[axis] - self.range_min[axis]
            size = self.voxel_size[axis]
            if extent <= 0:
                raise ValueError(f"range extent on axis {axis} must be positive, got {extent}")
            if size <= 0:
                raise ValueError(f"voxel size on axis {axis} must be positive, got {size}")
            cells = round(extent / size)
            if cells < 1 or abs(extent - cells * size) > MULTIPLE_TOL:
                raise ValueError(
                    f"range extent {extent} on axis {axis} is not a multiple of voxel size {size}"
                )
        return self

    @property
    def grid_shape(self) -> Tuple[int, int, int]:
        return tuple(
            int(round((self.range_max[a] - self.range_min[a]) / self.voxel_size[a])) for a in range(3)
        )


@dataclass
class VoxelGrid:
    coords: np.ndarray          # E x 3 grid indices, unique, lexicographic
    features: np.ndarray        # E x M x (2m+3)
    valid_counts: np.ndarray    # E, each in [1, M]
    point_to_voxel: np.ndarray  # N, -1 for out-of-range points
    point_index: np.ndarray     # E x M original point index of each row
    grid_shape: Tuple[int, int, int]
    num_classes: int

    @property
    def num_voxels(self) -> int:
        return len(self.coords)

    @property
    def points_per_voxel(self) -> int:
        return self.features.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return np.arange(self.points_per_voxel)[None, :] < self.valid_counts[:, None]

    @property
    def sem2d_rows(self) -> np.ndarray:
        return self.features[:, :, 3:3 + self.num_classes]

    @property
    def sem3d_rows(self) -> np.ndarray:
        return self.features[:, :, 3 + self.num_classes:]


def voxel_indices(points: np.ndarray, cfg: VoxelConfig) -> np.ndarray:
    """
    Integer grid index per point, floor convention with interior boundary
    snapping. Points inside [range_min, range_max) always land in a cell of
    the grid; points outside get -1 on every axis.
    """
    lo = np.array(cfg.range_min)
    hi = np.array(cfg.range_max)
    size = np.array(cfg.voxel_size)
    inside = np.all((points >= lo) & (points < hi), axis=1)
    index = np.floor((points - lo) / size + SNAP_EPS).astype(np.int64)
    index = np.clip(index, 0, np.array(cfg.grid_shape) - 1)
    index[~inside] = -1
    return index


def voxelize(painted: PaintedPointCloud, cfg: VoxelConfig) -> VoxelGrid:
    points = painted.cloud.points
    m = painted.num_classes
    shape = np.array(cfg.grid_shape)
    capacity = cfg.points_per_voxel

    index = voxel_indices(points, cfg)
    in_range = index[:, 0] >= 0
    members = np.flatnonzero(in_range)
    keys = np.ravel_multi_index(index[members].T, tuple(shape)) if len(members) else np.zeros(0, np.int64)

    order = np.lexsort((members, keys))
    members = members[order]
    keys = keys[order]
    unique_keys, starts, counts = np.unique(keys, return_index=True, return_counts=True)
    num_voxels = len(unique_keys)

    point_to_voxel = np.full(len(points), -1, dtype=np.int64)
    point_to_voxel[members] = np.repeat(np.arange(num_voxels), counts)

    valid_counts = np.minimum(counts, capacity).astype(np.int64)
    slot = np.arange(capacity)[None, :] % np.maximum(valid_counts, 1)[:, None]
    point_index = members[starts[:, None] + slot] if num_voxels else np.zeros((0, capacity), np.int64)

    overflow = np.flatnonzero(counts > capacity)
    for e in overflow:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, int(unique_keys[e])]))
        chosen = np.sort(rng.choice(counts[e], size=capacity, replace=False))
        point_index[e] = members[starts[e] + chosen]
    if len(overflow):
        logger.debug("subsampled %d of %d voxels down to %d points", len(overflow), num_voxels, capacity)

    rows = np.hstack([points, painted.sem2d, painted.sem3d])
    features = rows[point_index] if num_voxels else np.zeros((0, capacity, 2 * m + 3))
    coords = np.stack(np.unravel_index(unique_keys, tuple(shape)), axis=1).astype(np.int64)

    return VoxelGrid(
        coords=coords.reshape(-1, 3),
        features=features,
        valid_counts=valid_counts,
        point_to_voxel=point_to_voxel,
        point_index=point_index,
        grid_shape=tuple(int(s) for s in shape),
        num_classes=m,
    )


def scatter_to_points(grid: VoxelGrid, per_voxel: np.ndarray) -> np.ndarray:
    """N x d: every in-range point gets its voxel's row, dropped points get zeros."""
    per_voxel = np.asarray(per_voxel)
    if per_voxel.ndim != 2 or per_voxel.shape[0] != grid.num_voxels or per_voxel.shape[1] < 1:
        raise DimensionError(
            f"scatter_to_points: expected {grid.num_voxels} x d rows, got {per_voxel.shape}"
        )
    out = np.zeros((len(grid.point_to_voxel), per_voxel.shape[1]), dtype=per_voxel.dtype)
    hit = grid.point_to_voxel >= 0
    out[hit] = per_voxel[grid.point_to_voxel[hit]]
    return out
