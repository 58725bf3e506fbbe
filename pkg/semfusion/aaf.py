"""
Adaptive attention fusion of 2D and 3D semantics, one score per voxel.

    local_i   = max over rows of MLP_l(row)             E x C1
    global    = max over voxels of MLP_g(local_i)       C2
    s_i       = sigmoid(MLP_att([local_i | global]))    E
    fused_i   = s_i * sem2d_i  (+ or |)  (1 - s_i) * sem3d_i

sem2d_i / sem3d_i are the means of the voxel's valid rows.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from semfusion.config import AAF_ATTENTION_HIDDEN, AAF_GLOBAL_CHANNELS, AAF_LOCAL_CHANNELS
from semfusion.errors import DimensionError
from semfusion.functional import maxpool_over_axis
from semfusion.layers import Mlp
from semfusion.tensor import Tensor, concat
from semfusion.voxelizer import VoxelGrid

logger = logging.getLogger(__name__)


class CombineMode(str, Enum):
    CONCAT = "concat"
    ADD = "add"


class AafConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    num_classes: int = Field(ge=2)
    local_channels: int = Field(default=AAF_LOCAL_CHANNELS, gt=0)
    global_channels: int = Field(default=AAF_GLOBAL_CHANNELS, gt=0)
    attention_hidden: int = Field(default=AAF_ATTENTION_HIDDEN, gt=0)
    combine: CombineMode = CombineMode.ADD
    zero_attention: bool = True

    @property
    def feature_width(self) -> int:
        return 2 * self.num_classes + 3

    @property
    def fused_width(self) -> int:
        return self.num_classes if self.combine is CombineMode.ADD else 2 * self.num_classes


@dataclass
class AafParams:
    config: AafConfig
    mlp_l: Mlp
    mlp_g: Mlp
    mlp_att: Mlp

    @classmethod
    def init(cls, config: AafConfig, rng: np.random.Generator) -> "AafParams":
        c1, c2 = config.local_channels, config.global_channels
        return cls(
            config=config,
            mlp_l=Mlp.build([config.feature_width, c1], rng),
            mlp_g=Mlp.build([c1, c2], rng),
            mlp_att=Mlp.build([c1 + c2, config.attention_hidden, 1], rng,
                              norm_last=False, zero_last=config.zero_attention),
        )

    @property
    def combine(self) -> CombineMode:
        return self.config.combine

    def parameters(self) -> List[Tensor]:
        return self.mlp_l.parameters() + self.mlp_g.parameters() + self.mlp_att.parameters()

    def state_arrays(self) -> List[np.ndarray]:
        """MLP_l, then MLP_g, then MLP_att, each in Mlp.state_arrays order."""
        return self.mlp_l.state_arrays() + self.mlp_g.state_arrays() + self.mlp_att.state_arrays()

    def load_state_arrays(self, arrays: Iterator[np.ndarray]) -> None:
        self.mlp_l.load_state_arrays(arrays)
        self.mlp_g.load_state_arrays(arrays)
        self.mlp_att.load_state_arrays(arrays)


@dataclass
class AafOutput:
    attention: Tensor     # E, strictly inside (0, 1)
    fused: Tensor         # E x m (ADD) or E x 2m (CONCAT)
    local_feats: Tensor   # E x C1
    global_feat: Tensor   # C2
    sem2d: np.ndarray     # E x m voxel summaries
    sem3d: np.ndarray

    @property
    def weight_2d(self) -> np.ndarray:
        return self.attention.data

    @property
    def weight_3d(self) -> np.ndarray:
        return 1.0 - self.attention.data


def local_features(grid: VoxelGrid, params: AafParams, training: bool = True) -> Tensor:
    num_voxels, capacity, width = grid.features.shape
    if num_voxels == 0:
        raise DimensionError("local_features: the voxel grid is empty")
    if width != params.mlp_l.in_features:
        raise DimensionError(
            f"local_features: grid rows have width {width}, MLP_l expects {params.mlp_l.in_features}"
        )
    rows = Tensor(grid.features.reshape(num_voxels * capacity, width))
    mask = grid.valid_mask.reshape(-1) if training else None
    per_row = params.mlp_l(rows, training=training, mask=mask)
    pooled, _ = maxpool_over_axis(per_row.reshape(num_voxels, capacity, -1), axis=1)
    return pooled


def global_feature(local: Tensor, params: AafParams, training: bool = True) -> Tensor:
    if local.shape[0] == 0:
        raise DimensionError("global_feature: no voxels to pool over")
    pooled, _ = maxpool_over_axis(params.mlp_g(local, training=training), axis=0)
    return pooled


def attention_scores(local: Tensor, global_feat: Tensor, params: AafParams,
                     training: bool = True) -> Tensor:
    num_voxels = local.shape[0]
    expanded = global_feat.reshape(1, -1).broadcast_to((num_voxels, global_feat.shape[0]))
    logits = params.mlp_att(concat([local, expanded], axis=1), training=training)
    return logits.reshape(num_voxels).sigmoid()


def voxel_semantics(grid: VoxelGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Mean of the valid rows' 2D and 3D vectors per voxel."""
    weights = grid.valid_mask[:, :, None] / grid.valid_counts[:, None, None]
    return (grid.sem2d_rows * weights).sum(axis=1), (grid.sem3d_rows * weights).sum(axis=1)


def fuse_semantics(grid: VoxelGrid, scores: Tensor, combine: CombineMode = CombineMode.ADD) -> Tensor:
    sem2d, sem3d = voxel_semantics(grid)
    s = scores.reshape(-1, 1)
    weighted_2d = s * sem2d
    weighted_3d = (1.0 - s) * sem3d
    if CombineMode(combine) is CombineMode.CONCAT:
        return concat([weighted_2d, weighted_3d], axis=1)
    return weighted_2d + weighted_3d


def aaf_forward(grid: VoxelGrid, params: AafParams, training: bool = True) -> AafOutput:
    local = local_features(grid, params, training)
    global_feat = global_feature(local, params, training)
    scores = attention_scores(local, global_feat, params, training)
    sem2d, sem3d = voxel_semantics(grid)
    fused = fuse_semantics(grid, scores, params.combine)
    return AafOutput(scores, fused, local, global_feat, sem2d, sem3d)
