"""
The per-voxel classifier trained by the pipeline.

Strategy decides what the head sees for each voxel:
    sem2d    mean painted 2D vector of the voxel
    sem3d    mean 3D vector of the voxel
    aaf      the AAF fused vector
    aaf-dff  the AAF fused vector plus the DFF feature at the voxel's BEV cell
"""

from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from semfusion.aaf import AafConfig, AafParams, aaf_forward, voxel_semantics
from semfusion.dff import DffConfig, DffParams, dff_forward
from semfusion.errors import DimensionError, FormatError
from semfusion.layers import Linear, Mlp
from semfusion.tensor import Tensor, concat
from semfusion.voxelizer import VoxelGrid


class Strategy(str, Enum):
    SEM2D_ONLY = "sem2d"
    SEM3D_ONLY = "sem3d"
    AAF = "aaf"
    AAF_DFF = "aaf-dff"

    @property
    def uses_aaf(self) -> bool:
        return self in (Strategy.AAF, Strategy.AAF_DFF)


def bev_cells(grid: VoxelGrid) -> np.ndarray:
    """Flat x-y cell index of each voxel."""
    ny = grid.grid_shape[1]
    return grid.coords[:, 0] * ny + grid.coords[:, 1]


def bev_scatter_matrix(grid: VoxelGrid) -> np.ndarray:
    """(X*Y) x E matrix averaging voxel rows over each z column."""
    nx, ny, _ = grid.grid_shape
    cells = bev_cells(grid)
    counts = np.bincount(cells, minlength=nx * ny)
    matrix = np.zeros((nx * ny, grid.num_voxels))
    matrix[cells, np.arange(grid.num_voxels)] = 1.0 / counts[cells]
    return matrix


class FusionModel:
    """AAF, optional BEV projection + DFF, and the ToyHead MLP."""

    def __init__(self, strategy: Strategy, num_classes: int, grid_shape: Tuple[int, int, int],
                 aaf_config: AafConfig, dff_config: DffConfig, head_hidden: int,
                 rng: np.random.Generator):
        self.strategy = Strategy(strategy)
        self.num_classes = num_classes
        self.grid_shape = tuple(grid_shape)
        self.aaf: Optional[AafParams] = None
        self.bev_proj: Optional[Linear] = None
        self.dff: Optional[DffParams] = None

        head_in = num_classes
        if self.strategy.uses_aaf:
            self.aaf = AafParams.init(aaf_config, rng)
            head_in = aaf_config.fused_width
        if self.strategy is Strategy.AAF_DFF:
            nx, ny, _ = self.grid_shape
            if nx % 2 or ny % 2:
                raise DimensionError(f"aaf-dff needs an even BEV grid, got {nx} x {ny}")
            self.bev_proj = Linear.init(aaf_config.local_channels + aaf_config.fused_width,
                                        dff_config.in_channels, rng)
            self.dff = DffParams.init(dff_config, rng)
            head_in += dff_config.out_channels
        self.head = Mlp.build([head_in, head_hidden, num_classes], rng, norm_last=False)

    # --- forward ---

    def _check_grid(self, grid: VoxelGrid) -> None:
        if grid.num_classes != self.num_classes:
            raise DimensionError(
                f"grid carries {grid.num_classes} classes, model expects {self.num_classes}"
            )
        if tuple(grid.grid_shape) != self.grid_shape:
            raise DimensionError(f"grid shape {grid.grid_shape} differs from model {self.grid_shape}")

    def _bev_map(self, grid: VoxelGrid, local: Tensor, fused: Tensor) -> Tensor:
        nx, ny, _ = self.grid_shape
        per_voxel = self.bev_proj(concat([local, fused], axis=1))
        columns = Tensor(bev_scatter_matrix(grid)) @ per_voxel
        return columns.T.reshape(1, per_voxel.shape[1], nx, ny)

    def forward(self, grids: Sequence[VoxelGrid], training: bool = True) -> Tensor:
        """Logits for every voxel of every grid, stacked in grid order."""
        features: List[Tensor] = []
        bev_maps: List[Tensor] = []
        for grid in grids:
            self._check_grid(grid)
            if self.strategy is Strategy.SEM2D_ONLY:
                features.append(Tensor(voxel_semantics(grid)[0]))
            elif self.strategy is Strategy.SEM3D_ONLY:
                features.append(Tensor(voxel_semantics(grid)[1]))
            else:
                out = aaf_forward(grid, self.aaf, training)
                features.append(out.fused)
                if self.dff is not None:
                    bev_maps.append(self._bev_map(grid, out.local_feats, out.fused))
        stacked = features[0] if len(features) == 1 else concat(features, axis=0)

        if self.dff is not None:
            nx, ny, _ = self.grid_shape
            bev = bev_maps[0] if len(bev_maps) == 1 else concat(bev_maps, axis=0)
            refined = dff_forward(bev, self.dff, training)
            channels = refined.shape[1]
            flat = refined.transpose(0, 2, 3, 1).reshape(len(grids) * nx * ny, channels)
            rows = np.concatenate([b * nx * ny + bev_cells(g) for b, g in enumerate(grids)])
            stacked = concat([stacked, flat[rows]], axis=1)
        return self.head(stacked, training=training)

    def predict(self, grid: VoxelGrid) -> np.ndarray:
        return np.argmax(self.forward([grid], training=False).data, axis=1)

    # --- parameters and checkpoint state ---

    def parameters(self) -> List[Tensor]:
        params: List[Tensor] = []
        if self.aaf is not None:
            params += self.aaf.parameters()
        if self.bev_proj is not None:
            params += [self.bev_proj.weight, self.bev_proj.bias]
        if self.dff is not None:
            params += self.dff.parameters()
        return params + self.head.parameters()

    def head_state_arrays(self) -> List[np.ndarray]:
        """[bev_proj weight, bias (aaf-dff only)] then the head MLP."""
        arrays = []
        if self.bev_proj is not None:
            arrays += [self.bev_proj.weight.data, self.bev_proj.bias.data]
        return arrays + self.head.state_arrays()

    def load_head_state_arrays(self, arrays: Iterator[np.ndarray]) -> None:
        if self.bev_proj is not None:
            for param in (self.bev_proj.weight, self.bev_proj.bias):
                array = np.asarray(next(arrays), dtype=np.float64)
                if array.shape != param.shape:
                    raise DimensionError(f"stored tensor {array.shape} does not match {param.shape}")
                param.data = array.copy()
        self.head.load_state_arrays(arrays)


def load_all(arrays: List[np.ndarray], loader, what: str) -> None:
    """Feed ``arrays`` to ``loader`` and insist every tensor was consumed."""
    remaining = iter(arrays)
    try:
        loader(remaining)
    except StopIteration as exc:
        raise FormatError(f"{what}: checkpoint holds too few tensors") from exc
    if next(remaining, None) is not None:
        raise FormatError(f"{what}: checkpoint holds extra tensors")
