"""
Dense tensor kernels for the autoencoder layers.

Tensors are plain float64 ``numpy.ndarray`` objects in ``[C, H, W]`` layout.
Every layer op also accepts a leading batch axis (``[N, C, H, W]``) so the
training loop can push a whole mini-batch through one call; the single-image
form is the batch form with ``N`` squeezed away.
"""
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes do not fit together."""


def as_tensor(x):
    """Return ``x`` as a C-contiguous float64 array."""
    return np.ascontiguousarray(x, dtype=np.float64)


def _batched(x):
    x = as_tensor(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected [C,H,W] or [N,C,H,W] tensor, got shape {x.shape}")


def _unbatch(x, squeeze):
    return x[0] if squeeze else x


@dataclass
class ConvParams:
    weights: np.ndarray  # [out_channels, in_channels, k, k]
    bias: np.ndarray  # [out_channels]
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        self.weights = as_tensor(self.weights)
        self.bias = as_tensor(self.bias)
        if self.weights.ndim != 4 or self.weights.shape[2] != self.weights.shape[3]:
            raise ShapeError(f"conv weights must be [O,C,k,k], got {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(
                f"conv bias shape {self.bias.shape} does not match "
                f"{self.weights.shape[0]} output channels"
            )
        if self.stride < 1:
            raise ValueError(f"stride must be positive, got {self.stride}")
        if self.padding < 0:
            raise ValueError(f"padding must be non-negative, got {self.padding}")

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel_size(self):
        return self.weights.shape[2]

    def output_size(self, size):
        out = (size + 2 * self.padding - self.kernel_size) // self.stride + 1
        if out < 1:
            raise ShapeError(
                f"convolution of spatial size {size} with k={self.kernel_size}, "
                f"stride={self.stride}, padding={self.padding} is empty"
            )
        return out


def _check_conv_input(x, params):
    if x.shape[1] != params.in_channels:
        raise ShapeError(
            f"input has {x.shape[1]} channels, conv expects {params.in_channels}"
        )
    return params.output_size(x.shape[2]), params.output_size(x.shape[3])


def conv2d_forward(x, params):
    """Cross-correlate ``x`` with ``params.weights`` and add the bias.

    Out-of-range taps read zero padding. The k*k kernel offsets are visited in
    a fixed order, each as one tensor contraction over the input channels.
    """
    x, squeeze = _batched(x)
    ho, wo = _check_conv_input(x, params)
    s, p, k = params.stride, params.padding, params.kernel_size
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    out = np.zeros((x.shape[0], params.out_channels, ho, wo))
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i : i + s * (ho - 1) + 1 : s, j : j + s * (wo - 1) + 1 : s]
            # [N,C,ho,wo] x [O,C] -> [N,ho,wo,O]
            out += np.tensordot(patch, params.weights[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
    out += params.bias[None, :, None, None]
    return _unbatch(out, squeeze)


def conv2d_backward(x, params, upstream):
    """Gradients of ``conv2d_forward`` w.r.t. input, weights and bias."""
    x, squeeze = _batched(x)
    ho, wo = _check_conv_input(x, params)
    g = as_tensor(upstream)
    if squeeze and g.ndim == 3:
        g = g[None]
    expected = (x.shape[0], params.out_channels, ho, wo)
    if g.shape != expected:
        raise ShapeError(f"upstream gradient shape {g.shape} != conv output shape {expected}")

    s, p, k = params.stride, params.padding, params.kernel_size
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
    grad_xp = np.zeros_like(xp)
    grad_w = np.zeros_like(params.weights)
    for i in range(k):
        for j in range(k):
            rows = slice(i, i + s * (ho - 1) + 1, s)
            cols = slice(j, j + s * (wo - 1) + 1, s)
            grad_w[:, :, i, j] = np.tensordot(g, xp[:, :, rows, cols], axes=([0, 2, 3], [0, 2, 3]))
            # [N,O,ho,wo] x [O,C] -> [N,ho,wo,C]
            grad_xp[:, :, rows, cols] += np.tensordot(g, params.weights[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
    grad_b = g.sum(axis=(0, 2, 3))
    h, w = x.shape[2], x.shape[3]
    grad_x = grad_xp[:, :, p : p + h, p : p + w]
    return _unbatch(np.ascontiguousarray(grad_x), squeeze), grad_w, grad_b


def relu(x):
    return np.maximum(as_tensor(x), 0.0)


def relu_backward(x, upstream):
    # derivative at exactly 0 is taken as 0
    x = as_tensor(x)
    return np.where(x > 0.0, as_tensor(upstream), 0.0)


def sigmoid(x):
    x = as_tensor(x)
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_backward(out, upstream):
    """Backward pass of ``sigmoid`` given its *output*."""
    out = as_tensor(out)
    return as_tensor(upstream) * out * (1.0 - out)


def upsample_nearest(x, factor):
    """Replicate every pixel into a ``factor`` x ``factor`` block."""
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    x, squeeze = _batched(x)
    out = x.repeat(factor, axis=2).repeat(factor, axis=3)
    return _unbatch(out, squeeze)


def upsample_backward(upstream, factor):
    """Adjoint of ``upsample_nearest``: sum the gradient over each block."""
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    g, squeeze = _batched(upstream)
    n, c, h, w = g.shape
    if h % factor or w % factor:
        raise ShapeError(f"gradient shape {g.shape} is not a multiple of factor {factor}")
    out = g.reshape(n, c, h // factor, factor, w // factor, factor).sum(axis=(3, 5))
    return _unbatch(out, squeeze)


def mse_loss(pred, target):
    """Mean squared error and its gradient w.r.t. ``pred``."""
    pred = as_tensor(pred)
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n
