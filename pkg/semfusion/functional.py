"""
Layer primitives on top of the tensor tape.

Each function takes Tensors (plus parameter containers from ``layers``) and
returns Tensors whose backward closures are recorded when any input requires
grad.
"""

import logging
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import log_softmax, softmax

from semfusion.errors import DimensionError
from semfusion.tensor import Tensor, _accumulate, as_tensor

logger = logging.getLogger(__name__)

if TYPE_CHECKING:
    from semfusion.layers import BatchNorm, Linear


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"axis {axis} out of range for a {ndim}-d tensor")
    return axis % ndim


def _selected_rows(x: Tensor, mask: Optional[np.ndarray]) -> int:
    if mask is None:
        return x.shape[0]
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (x.shape[0],):
        raise DimensionError(
            f"batchnorm_forward: mask {mask.shape} does not match {x.shape[0]} rows"
        )
    return int(mask.sum())


# --- Dense layers ---

def linear_forward(x: Tensor, layer: "Linear") -> Tensor:
    """y = x @ W + b."""
    if x.ndim != 2 or x.shape[1] != layer.weight.shape[0]:
        raise DimensionError(
            f"linear_forward: input {x.shape} does not fit weight {layer.weight.shape}"
        )
    return x @ layer.weight + layer.bias


def batchnorm_forward(
    x: Tensor,
    norm: "BatchNorm",
    training: bool,
    mask: Optional[np.ndarray] = None,
) -> Tensor:
    """
    Batch normalization over the rows of a B x C tensor.

    In training mode the statistics come from the rows selected by ``mask``
    (all rows when None) and the running statistics are updated. In eval mode
    the running statistics are used and ``mask`` is ignored. Training batches
    with fewer than 2 selected rows have no variance to normalize by; they
    are normalized with the running statistics, which stay unchanged.
    """
    if x.ndim != 2 or x.shape[1] != norm.num_features:
        raise DimensionError(
            f"batchnorm_forward: input {x.shape} does not match {norm.num_features} features"
        )

    if training:
        rows = _selected_rows(x, mask)
        if rows < 2:
            logger.debug("batchnorm_forward: %d row(s) in training mode, using running stats", rows)
            training = False

    if not training:
        inv_std = 1.0 / np.sqrt(norm.running_var + norm.eps)
        normalized = (x - norm.running_mean) * inv_std
        return normalized * norm.scale + norm.shift

    if mask is None:
        mean = x.mean(axis=0, keepdims=True)
        centred = x - mean
        var = (centred * centred).mean(axis=0, keepdims=True)
    else:
        weights = (np.asarray(mask, dtype=bool) / rows)[:, None]
        mean = (x * weights).sum(axis=0, keepdims=True)
        centred = x - mean
        var = (centred * centred * weights).sum(axis=0, keepdims=True)

    norm.update_running(mean.data[0], var.data[0], rows)
    normalized = centred * (var + norm.eps) ** -0.5
    return normalized * norm.scale + norm.shift


# --- Activations ---

def relu(x: Tensor) -> Tensor:
    return x.relu()


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def softmax_over_axis(x: Tensor, axis: int = -1) -> Tensor:
    axis = _normalize_axis(axis, x.ndim)
    value = softmax(x.data, axis=axis)

    def backward(g):
        inner = (g * value).sum(axis=axis, keepdims=True)
        _accumulate(x, value * (g - inner))

    return Tensor._result(value, (x,), backward, "softmax")


def log_softmax_over_axis(x: Tensor, axis: int = -1) -> Tensor:
    axis = _normalize_axis(axis, x.ndim)
    value = log_softmax(x.data, axis=axis)

    def backward(g):
        _accumulate(x, g - np.exp(value) * g.sum(axis=axis, keepdims=True))

    return Tensor._result(value, (x,), backward, "log_softmax")


# --- Pooling ---

def maxpool_over_axis(x: Tensor, axis: int) -> Tuple[Tensor, np.ndarray]:
    """Max along ``axis``. Ties go to the lowest index; gradient flows only there."""
    axis = _normalize_axis(axis, x.ndim)
    if x.shape[axis] == 0:
        raise DimensionError(f"maxpool_over_axis: axis {axis} of {x.shape} is empty")
    argmax = np.argmax(x.data, axis=axis)
    picked = np.expand_dims(argmax, axis)
    values = np.take_along_axis(x.data, picked, axis=axis).squeeze(axis)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.put_along_axis(full, picked, np.expand_dims(g, axis), axis=axis)
        _accumulate(x, full)

    return Tensor._result(values, (x,), backward, "maxpool"), argmax


# --- Convolutions ---

def _check_conv_args(kernel: Tuple[int, int], stride: int, padding: int) -> None:
    if min(kernel) < 1 or stride < 1 or padding < 0:
        raise DimensionError(
            f"convolution needs k >= 1, stride >= 1, padding >= 0; got k={kernel}, "
            f"stride={stride}, padding={padding}"
        )


def conv2d_forward(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlation of B x C x H x W with C_out x C x kh x kw."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"conv2d_forward: input {x.shape} does not fit weight {weight.shape}")
    kh, kw = weight.shape[2], weight.shape[3]
    _check_conv_args((kh, kw), stride, padding)
    batch, _, height, width = x.shape
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    if out_h <= 0 or out_w <= 0:
        raise DimensionError(
            f"conv2d_forward: input {x.shape} with kernel {(kh, kw)} gives empty output"
        )

    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = sliding_window_view(padded, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    out = np.einsum("bchwij,ocij->bohw", windows, weight.data, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        _accumulate(weight, np.einsum("bohw,bchwij->ocij", g, windows, optimize=True))
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            grad_padded = np.zeros_like(padded)
            for i in range(kh):
                for j in range(kw):
                    grad_padded[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += (
                        np.einsum("bohw,oc->bchw", g, weight.data[:, :, i, j])
                    )
            _accumulate(x, grad_padded[:, :, padding:padding + height, padding:padding + width])

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward, "conv2d")


def deconv2d_forward(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Transposed convolution; weight is C_in x C_out x kh x kw."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise DimensionError(
            f"deconv2d_forward: input {x.shape} does not fit weight {weight.shape}"
        )
    kh, kw = weight.shape[2], weight.shape[3]
    _check_conv_args((kh, kw), stride, padding)
    batch, _, height, width = x.shape
    channels_out = weight.shape[1]
    full_h = (height - 1) * stride + kh
    full_w = (width - 1) * stride + kw
    if full_h - 2 * padding <= 0 or full_w - 2 * padding <= 0:
        raise DimensionError(
            f"deconv2d_forward: padding {padding} leaves no output for input {x.shape}"
        )

    full = np.zeros((batch, channels_out, full_h, full_w))
    for i in range(kh):
        for j in range(kw):
            full[:, :, i:i + stride * height:stride, j:j + stride * width:stride] += (
                np.einsum("bchw,co->bohw", x.data, weight.data[:, :, i, j])
            )
    out = full[:, :, padding:full_h - padding, padding:full_w - padding]
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def backward(g):
        grad_full = np.zeros((batch, channels_out, full_h, full_w))
        grad_full[:, :, padding:full_h - padding, padding:full_w - padding] = g
        grad_x = np.zeros(x.shape)
        grad_w = np.zeros(weight.shape)
        for i in range(kh):
            for j in range(kw):
                window = grad_full[:, :, i:i + stride * height:stride, j:j + stride * width:stride]
                grad_x += np.einsum("bohw,co->bchw", window, weight.data[:, :, i, j])
                grad_w[:, :, i, j] = np.einsum("bchw,bohw->co", x.data, window)
        _accumulate(x, grad_x)
        _accumulate(weight, grad_w)
        if bias is not None:
            _accumulate(bias, g.sum(axis=(0, 2, 3)))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._result(out, parents, backward, "deconv2d")


# --- Losses ---

def cross_entropy(
    logits: Tensor,
    labels: np.ndarray,
    class_weights: Optional[np.ndarray] = None,
) -> Tensor:
    """Weighted mean of -log softmax(logits)[label] over the rows."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(
            f"cross_entropy: logits {logits.shape} do not match labels {labels.shape}"
        )
    if class_weights is None:
        class_weights = np.ones(logits.shape[1])
    row_weights = np.asarray(class_weights, dtype=np.float64)[labels]
    log_probs = log_softmax_over_axis(logits, axis=1)
    picked = log_probs[np.arange(len(labels)), labels]
    return -(picked * row_weights).sum() / float(row_weights.sum())


def mse(prediction: Tensor, target) -> Tensor:
    diff = prediction - as_tensor(target)
    return (diff * diff).mean()
