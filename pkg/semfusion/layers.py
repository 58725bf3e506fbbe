"""Parameter containers: Linear, BatchNorm, Mlp, ConvUnit, Deconv."""

from dataclasses import dataclass
from enum import Enum
from typing import Iterator, List, Optional, Sequence

import numpy as np

from semfusion.config import BN_EPS, BN_MOMENTUM
from semfusion.errors import DimensionError
from semfusion.functional import (
    batchnorm_forward,
    conv2d_forward,
    deconv2d_forward,
    linear_forward,
)
from semfusion.tensor import Tensor


class Activation(str, Enum):
    RELU = "relu"


def _he_normal(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / max(fan_in, 1)), size=shape)


@dataclass
class Linear:
    """Dense layer, weight stored in x out."""

    weight: Tensor
    bias: Tensor

    @classmethod
    def init(cls, in_features: int, out_features: int, rng: np.random.Generator, zero: bool = False) -> "Linear":
        if zero:
            weight = np.zeros((in_features, out_features))
        else:
            weight = _he_normal(rng, (in_features, out_features), in_features)
        return cls(Tensor(weight, requires_grad=True), Tensor(np.zeros(out_features), requires_grad=True))

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    def __call__(self, x: Tensor) -> Tensor:
        return linear_forward(x, self)


@dataclass
class BatchNorm:
    """Learnable scale/shift plus running statistics."""

    scale: Tensor
    shift: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    @classmethod
    def init(cls, num_features: int) -> "BatchNorm":
        return cls(
            scale=Tensor(np.ones(num_features), requires_grad=True),
            shift=Tensor(np.zeros(num_features), requires_grad=True),
            running_mean=np.zeros(num_features),
            running_var=np.ones(num_features),
        )

    @property
    def num_features(self) -> int:
        return self.scale.shape[0]

    def update_running(self, mean: np.ndarray, var: np.ndarray, rows: int) -> None:
        unbiased = var * rows / (rows - 1)
        self.running_mean = (1.0 - self.momentum) * self.running_mean + self.momentum * mean
        self.running_var = (1.0 - self.momentum) * self.running_var + self.momentum * unbiased

    def __call__(self, x: Tensor, training: bool, mask: Optional[np.ndarray] = None) -> Tensor:
        return batchnorm_forward(x, self, training, mask)


def batchnorm_2d(x: Tensor, norm: BatchNorm, training: bool) -> Tensor:
    """BatchNorm over B*H*W rows of a B x C x H x W map."""
    batch, channels, height, width = x.shape
    rows = x.transpose(0, 2, 3, 1).reshape(batch * height * width, channels)
    out = batchnorm_forward(rows, norm, training)
    return out.reshape(batch, height, width, channels).transpose(0, 3, 1, 2)


@dataclass
class MlpLayer:
    linear: Linear
    norm: Optional[BatchNorm] = None
    activation: Optional[Activation] = None


def _activate(x: Tensor, activation: Optional[Activation]) -> Tensor:
    if activation is Activation.RELU:
        return x.relu()
    return x


class Mlp:
    """Chain of Linear -> BatchNorm -> activation stages."""

    def __init__(self, layers: Sequence[MlpLayer]):
        if not layers:
            raise DimensionError("Mlp needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.linear.out_features != nxt.linear.in_features:
                raise DimensionError(
                    f"Mlp layers do not chain: {prev.linear.weight.shape} then {nxt.linear.weight.shape}"
                )
        self.layers: List[MlpLayer] = list(layers)

    @classmethod
    def build(
        cls,
        dims: Sequence[int],
        rng: np.random.Generator,
        norm_last: bool = True,
        zero_last: bool = False,
        activation: Activation = Activation.RELU,
    ) -> "Mlp":
        """
        Every hidden layer gets BatchNorm and ``activation``. The last layer
        gets them only when ``norm_last``; ``zero_last`` zeroes its weights.
        """
        if len(dims) < 2:
            raise DimensionError(f"Mlp.build needs at least two dims, got {list(dims)}")
        layers = []
        last = len(dims) - 2
        for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
            is_last = i == last
            linear = Linear.init(d_in, d_out, rng, zero=is_last and zero_last)
            staged = not is_last or norm_last
            layers.append(MlpLayer(
                linear=linear,
                norm=BatchNorm.init(d_out) if staged else None,
                activation=activation if staged else None,
            ))
        return cls(layers)

    @property
    def in_features(self) -> int:
        return self.layers[0].linear.in_features

    @property
    def out_features(self) -> int:
        return self.layers[-1].linear.out_features

    def forward(self, x: Tensor, training: bool = True, mask: Optional[np.ndarray] = None) -> Tensor:
        for layer in self.layers:
            x = layer.linear(x)
            if layer.norm is not None:
                x = layer.norm(x, training, mask)
            x = _activate(x, layer.activation)
        return x

    __call__ = forward

    def parameters(self) -> List[Tensor]:
        params = []
        for layer in self.layers:
            params += [layer.linear.weight, layer.linear.bias]
            if layer.norm is not None:
                params += [layer.norm.scale, layer.norm.shift]
        return params

    def state_arrays(self) -> List[np.ndarray]:
        """weight, bias[, scale, shift, running_mean, running_var] per layer."""
        arrays = []
        for layer in self.layers:
            arrays += [layer.linear.weight.data, layer.linear.bias.data]
            if layer.norm is not None:
                arrays += [layer.norm.scale.data, layer.norm.shift.data,
                           layer.norm.running_mean, layer.norm.running_var]
        return arrays

    def load_state_arrays(self, arrays: Iterator[np.ndarray]) -> None:
        for layer in self.layers:
            _load_into(layer.linear.weight, next(arrays))
            _load_into(layer.linear.bias, next(arrays))
            if layer.norm is not None:
                _load_into(layer.norm.scale, next(arrays))
                _load_into(layer.norm.shift, next(arrays))
                layer.norm.running_mean = _checked(next(arrays), layer.norm.running_mean.shape)
                layer.norm.running_var = _checked(next(arrays), layer.norm.running_var.shape)


def _checked(array: np.ndarray, shape) -> np.ndarray:
    array = np.asarray(array, dtype=np.float64)
    if array.shape != tuple(shape):
        raise DimensionError(f"stored tensor {array.shape} does not match expected {tuple(shape)}")
    return array.copy()


def _load_into(param: Tensor, array: np.ndarray) -> None:
    param.data = _checked(array, param.shape)
    param.grad = None


# --- Convolutional units ---

@dataclass
class ConvUnit:
    """Conv2d -> BatchNorm -> ReLU."""

    weight: Tensor
    bias: Tensor
    norm: BatchNorm
    stride: int = 1
    padding: int = 1

    @classmethod
    def init(cls, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
             stride: int = 1, padding: int = 1) -> "ConvUnit":
        fan_in = in_channels * kernel * kernel
        weight = _he_normal(rng, (out_channels, in_channels, kernel, kernel), fan_in)
        return cls(
            weight=Tensor(weight, requires_grad=True),
            bias=Tensor(np.zeros(out_channels), requires_grad=True),
            norm=BatchNorm.init(out_channels),
            stride=stride,
            padding=padding,
        )

    def __call__(self, x: Tensor, training: bool = True) -> Tensor:
        out = conv2d_forward(x, self.weight, self.bias, self.stride, self.padding)
        return batchnorm_2d(out, self.norm, training).relu()

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias, self.norm.scale, self.norm.shift]

    def state_arrays(self) -> List[np.ndarray]:
        return [self.weight.data, self.bias.data, self.norm.scale.data, self.norm.shift.data,
                self.norm.running_mean, self.norm.running_var]

    def load_state_arrays(self, arrays: Iterator[np.ndarray]) -> None:
        _load_into(self.weight, next(arrays))
        _load_into(self.bias, next(arrays))
        _load_into(self.norm.scale, next(arrays))
        _load_into(self.norm.shift, next(arrays))
        self.norm.running_mean = _checked(next(arrays), self.norm.running_mean.shape)
        self.norm.running_var = _checked(next(arrays), self.norm.running_var.shape)


@dataclass
class Deconv:
    """Plain transposed convolution (no norm, no activation)."""

    weight: Tensor
    bias: Tensor
    stride: int = 2
    padding: int = 0

    @classmethod
    def init(cls, in_channels: int, out_channels: int, kernel: int, rng: np.random.Generator,
             stride: int = 2, padding: int = 0) -> "Deconv":
        fan_in = in_channels * kernel * kernel // max(stride * stride, 1)
        weight = _he_normal(rng, (in_channels, out_channels, kernel, kernel), fan_in)
        return cls(
            weight=Tensor(weight, requires_grad=True),
            bias=Tensor(np.zeros(out_channels), requires_grad=True),
            stride=stride,
            padding=padding,
        )

    def __call__(self, x: Tensor, training: bool = True) -> Tensor:
        return deconv2d_forward(x, self.weight, self.bias, self.stride, self.padding)

    def parameters(self) -> List[Tensor]:
        return [self.weight, self.bias]

    def state_arrays(self) -> List[np.ndarray]:
        return [self.weight.data, self.bias.data]

    def load_state_arrays(self, arrays: Iterator[np.ndarray]) -> None:
        _load_into(self.weight, next(arrays))
        _load_into(self.bias, next(arrays))
