"""
Deep feature fusion: two receptive-field branches added together, then a
channel-attention residual scaled by a learnable beta that starts at 0.

    F1   = conv_block1(F0)                                   (4 Conv+BN+ReLU)
    F_L  = deconv2(conv2(conv_block2(F1)))                   (down 2x, up 2x)
    F_S  = conv4(conv3(F1))
    out  = CA(F_L + F_S)
"""

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from semfusion.config import DFF_BLOCK_CHANNELS, DFF_IN_CHANNELS, DFF_OUT_CHANNELS
from semfusion.errors import DimensionError
from semfusion.functional import softmax_over_axis
from semfusion.layers import ConvUnit, Deconv
from semfusion.tensor import Tensor, concat

BLOCK1_UNITS = 4


class AttentionMode(str, Enum):
    NONE = "none"                # plain F_L + F_S
    ONE_SCALE = "one_scale"      # CA(F_L) + F_S
    MULTI_SCALE = "multi_scale"  # CA(F_L + F_S)


class DffConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    in_channels: int = Field(default=DFF_IN_CHANNELS, gt=0)
    out_channels: int = Field(default=DFF_OUT_CHANNELS, gt=0)
    block_channels: int = Field(default=DFF_BLOCK_CHANNELS, gt=0)
    kernel: int = Field(default=3, gt=0)
    down_kernel: int = Field(default=3, gt=0)
    up_kernel: int = Field(default=2, gt=0)
    attention: AttentionMode = AttentionMode.MULTI_SCALE


@dataclass
class DffParams:
    config: DffConfig
    conv_block1: List[ConvUnit]
    conv_block2: ConvUnit
    conv2: ConvUnit
    deconv2: Deconv
    conv3: ConvUnit
    conv4: ConvUnit
    beta: Tensor

    @classmethod
    def init(cls, config: DffConfig, rng: np.random.Generator) -> "DffParams":
        c_in, c_out, block = config.in_channels, config.out_channels, config.block_channels
        k = config.kernel
        same = k // 2
        block1 = [ConvUnit.init(c_in if i == 0 else block, block, k, rng, padding=same)
                  for i in range(BLOCK1_UNITS)]
        return cls(
            config=config,
            conv_block1=block1,
            conv_block2=ConvUnit.init(block, block, config.down_kernel, rng,
                                      stride=2, padding=(config.down_kernel - 1) // 2),
            conv2=ConvUnit.init(block, c_out, k, rng, padding=same),
            deconv2=Deconv.init(c_out, c_out, config.up_kernel, rng, stride=2,
                                padding=(config.up_kernel - 2) // 2),
            conv3=ConvUnit.init(block, c_out, k, rng, padding=same),
            conv4=ConvUnit.init(c_out, c_out, k, rng, padding=same),
            beta=Tensor(np.array(0.0), requires_grad=True),
        )

    def _units(self):
        return [*self.conv_block1, self.conv_block2, self.conv2, self.deconv2, self.conv3, self.conv4]

    def parameters(self) -> List[Tensor]:
        params = []
        for unit in self._units():
            params += unit.parameters()
        return params + [self.beta]

    def state_arrays(self) -> List[np.ndarray]:
        """conv_block1[0..3], conv_block2, conv2, deconv2, conv3, conv4, beta."""
        arrays = []
        for unit in self._units():
            arrays += unit.state_arrays()
        return arrays + [self.beta.data]

    def load_state_arrays(self, arrays: Iterator[np.ndarray]) -> None:
        for unit in self._units():
            unit.load_state_arrays(arrays)
        beta = np.asarray(next(arrays), dtype=np.float64)
        if beta.size != 1:
            raise DimensionError(f"beta must be a scalar, got shape {beta.shape}")
        self.beta.data = beta.reshape(()).copy()
        self.beta.grad = None


def dff_branches(f0: Tensor, params: DffParams, training: bool = True) -> Tuple[Tensor, Tensor]:
    if f0.ndim != 4 or f0.shape[1] != params.config.in_channels:
        raise DimensionError(
            f"dff_branches: expected B x {params.config.in_channels} x H x W, got {f0.shape}"
        )
    height, width = f0.shape[2], f0.shape[3]
    if height % 2 or width % 2:
        raise DimensionError(f"dff_branches: H and W must be even, got {height} x {width}")

    f1 = f0
    for unit in params.conv_block1:
        f1 = unit(f1, training)
    long_branch = params.deconv2(params.conv2(params.conv_block2(f1, training), training))
    short_branch = params.conv4(params.conv3(f1, training), training)
    if long_branch.shape != short_branch.shape:
        raise DimensionError(
            f"dff_branches: branch shapes differ, {long_branch.shape} vs {short_branch.shape}"
        )
    return long_branch, short_branch


def channel_attention(f: Tensor, beta: Tensor) -> Tensor:
    """beta * softmax(X X^T) X + X over the channels of a single 1 x C x H x W map."""
    if f.ndim != 4 or f.shape[0] != 1:
        raise DimensionError(f"channel_attention: expected a 1 x C x H x W map, got {f.shape}")
    _, channels, height, width = f.shape
    x = f.reshape(channels, height * width)
    gram = x @ x.T
    weights = softmax_over_axis(gram, axis=1)
    out = beta * (weights @ x) + x
    return out.reshape(1, channels, height, width)


def _per_item_attention(f: Tensor, beta: Tensor) -> Tensor:
    items = [channel_attention(f[b:b + 1], beta) for b in range(f.shape[0])]
    return items[0] if len(items) == 1 else concat(items, axis=0)


def dff_forward(f0: Tensor, params: DffParams, training: bool = True) -> Tensor:
    long_branch, short_branch = dff_branches(f0, params, training)
    mode = params.config.attention
    if mode is AttentionMode.MULTI_SCALE:
        return _per_item_attention(long_branch + short_branch, params.beta)
    if mode is AttentionMode.ONE_SCALE:
        return _per_item_attention(long_branch, params.beta) + short_branch
    return long_branch + short_branch
