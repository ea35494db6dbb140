"""Neural layers: convolutions, fully-connected, and normalization.

All layers are pure functions from tensors to tensors.  Convolutions use an
im2col lowering so that forward and backward reduce to matrix products.
Instance and batch normalization are composed from tensor-core primitives,
so their gradients flow through the mean and variance automatically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor


@dataclass
class LayerParams:
    """Weight/bias pair of a convolutional or fully-connected layer.

    conv2d weights are (out, in, k, k); conv_transpose2d weights are
    (in, out, k, k); linear weights are (out, in).  Kernels are square.
    """

    weight: Tensor
    bias: Tensor


def _conv_geometry(h: int, w: int, k: int, stride: int, padding: int) -> tuple[int, int]:
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv: {h}x{w} input too small for kernel {k}, "
                         f"stride {stride}, padding {padding}")
    return h_out, w_out


def _im2col(x: np.ndarray, k: int, stride: int, padding: int,
            h_out: int, w_out: int) -> np.ndarray:
    """(N, C, H, W) -> (N, C*k*k, h_out*w_out) patch matrix."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((n, c, k, k, h_out, w_out))
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = x[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride]
    return cols.reshape(n, c * k * k, h_out * w_out)


def _col2im(cols: np.ndarray, n: int, c: int, h: int, w: int, k: int,
            stride: int, padding: int, h_out: int, w_out: int) -> np.ndarray:
    """Adjoint of _im2col: scatter-add patches back to (N, C, H, W)."""
    buf = np.zeros((n, c, h + 2 * padding, w + 2 * padding))
    cols = cols.reshape(n, c, k, k, h_out, w_out)
    for i in range(k):
        for j in range(k):
            buf[:, :, i:i + stride * h_out:stride, j:j + stride * w_out:stride] += cols[:, :, i, j]
    if padding:
        return buf[:, :, padding:padding + h, padding:padding + w]
    return buf


def _require_4d(x: Tensor, op: str) -> tuple[int, int, int, int]:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected (N, C, H, W), got shape {x.shape}")
    return x.shape


def conv2d(x: Tensor, p: LayerParams, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation with bias over an (N, C, H, W) batch."""
    n, c, h, w = _require_4d(x, "conv2d")
    o, ci, k, k2 = p.weight.shape
    if k != k2:
        raise ShapeError(f"conv2d: kernel must be square, got {p.weight.shape}")
    if ci != c:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {ci}")
    if p.bias.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {p.bias.shape} != ({o},)")
    h_out, w_out = _conv_geometry(h, w, k, stride, padding)

    cols = _im2col(x.data, k, stride, padding, h_out, w_out)   # (N, CKK, L)
    w_mat = p.weight.data.reshape(o, c * k * k)
    out = np.matmul(w_mat, cols)                               # (N, O, L)
    out += p.bias.data.reshape(1, o, 1)
    out = out.reshape(n, o, h_out, w_out)

    weight, bias = p.weight, p.bias

    def d_input(g: np.ndarray) -> np.ndarray:
        g_mat = g.reshape(n, o, h_out * w_out)
        cols_g = np.matmul(w_mat.T, g_mat)
        return _col2im(cols_g, n, c, h, w, k, stride, padding, h_out, w_out)

    def d_weight(g: np.ndarray) -> np.ndarray:
        g_mat = g.reshape(n, o, h_out * w_out)
        dw = np.matmul(g_mat, cols.transpose(0, 2, 1)).sum(axis=0)
        return dw.reshape(o, c, k, k)

    def d_bias(g: np.ndarray) -> np.ndarray:
        return g.sum(axis=(0, 2, 3))

    return Tensor.from_op(out, [(x, d_input), (weight, d_weight), (bias, d_bias)],
                          op="conv2d")


def conv_transpose2d(x: Tensor, p: LayerParams, stride: int = 1, padding: int = 0,
                     output_padding: int = 0) -> Tensor:
    """Fractionally-strided convolution; the adjoint of conv2d with the same
    weight, stride, and padding.  Weight layout is (C_in, C_out, k, k)."""
    n, c, h, w = _require_4d(x, "conv_transpose2d")
    ci, co, k, k2 = p.weight.shape
    if k != k2:
        raise ShapeError(f"conv_transpose2d: kernel must be square, got {p.weight.shape}")
    if ci != c:
        raise ShapeError(f"conv_transpose2d: input has {c} channels, weight expects {ci}")
    if p.bias.shape != (co,):
        raise ShapeError(f"conv_transpose2d: bias shape {p.bias.shape} != ({co},)")
    if stride < 1:
        raise ShapeError("conv_transpose2d: stride must be >= 1")
    if not 0 <= output_padding < stride:
        raise ShapeError("conv_transpose2d: output_padding must be in [0, stride)")
    h_out = (h - 1) * stride - 2 * padding + k + output_padding
    w_out = (w - 1) * stride - 2 * padding + k + output_padding
    if h_out < 1 or w_out < 1:
        raise ShapeError(f"conv_transpose2d: computed output {h_out}x{w_out} is empty")
    # Geometry of the conv this op is the adjoint of: (co, h_out) -> (ci, h).
    hc, wc = _conv_geometry(h_out, w_out, k, stride, padding)
    if (hc, wc) != (h, w):
        raise ShapeError("conv_transpose2d: inconsistent geometry "
                         f"(adjoint conv would produce {hc}x{wc}, input is {h}x{w})")

    w_mat = p.weight.data.reshape(ci, co * k * k)              # conv weight (O=ci, IKK)
    x_mat = x.data.reshape(n, ci, h * w)
    cols = np.matmul(w_mat.T, x_mat)                           # (N, co*k*k, h*w)
    out = _col2im(cols, n, co, h_out, w_out, k, stride, padding, h, w)
    out += p.bias.data.reshape(1, co, 1, 1)

    weight, bias = p.weight, p.bias

    def d_input(g: np.ndarray) -> np.ndarray:
        cols_g = _im2col(g, k, stride, padding, h, w)           # (N, co*k*k, h*w)
        du = np.matmul(w_mat, cols_g)
        return du.reshape(n, ci, h, w)

    def d_weight(g: np.ndarray) -> np.ndarray:
        cols_g = _im2col(g, k, stride, padding, h, w)
        dw = np.matmul(x_mat, cols_g.transpose(0, 2, 1)).sum(axis=0)
        return dw.reshape(ci, co, k, k)

    def d_bias(g: np.ndarray) -> np.ndarray:
        return g.sum(axis=(0, 2, 3))

    return Tensor.from_op(out, [(x, d_input), (weight, d_weight), (bias, d_bias)],
                          op="conv_transpose2d")


def linear(x: Tensor, p: LayerParams) -> Tensor:
    """Affine map x @ W^T + b for x of shape (N, I) and W of shape (O, I)."""
    if x.ndim != 2:
        raise ShapeError(f"linear: expected (N, I), got {x.shape}")
    o, i = p.weight.shape
    if x.shape[1] != i:
        raise ShapeError(f"linear: input width {x.shape[1]} != weight width {i}")
    if p.bias.shape != (o,):
        raise ShapeError(f"linear: bias shape {p.bias.shape} != ({o},)")
    out = x.data @ p.weight.data.T + p.bias.data
    weight, bias = p.weight, p.bias
    xdata = x.data

    return Tensor.from_op(out, [
        (x, lambda g: g @ weight.data),
        (weight, lambda g: g.T @ xdata),
        (bias, lambda g: g.sum(axis=0)),
    ], op="linear")


def _normalize(x: Tensor, axes: tuple[int, ...], eps: float) -> Tensor:
    if eps <= 0:
        raise ShapeError("normalization: eps must be positive")
    stat_shape = [1 if a in axes else d for a, d in enumerate(x.shape)]
    mu = x.mean(axes=axes).reshape(stat_shape).expand(x.shape)
    centered = x - mu
    var = centered.square().mean(axes=axes)
    denom = (var + eps).sqrt().reshape(stat_shape).expand(x.shape)
    return centered / denom


def instance_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each (sample, channel) plane by its own spatial mean and
    population variance.  Identical at train and test time."""
    _require_4d(x, "instance_norm")
    return _normalize(x, (2, 3), eps)


def batch_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each channel by mean and population variance pooled over
    the batch and both spatial axes.  Batch statistics are used always."""
    _require_4d(x, "batch_norm")
    return _normalize(x, (0, 2, 3), eps)


def scale_bias(y: Tensor, s: Tensor, b: Tensor) -> Tensor:
    """Per-channel affine s * y + b for y of shape (N, C, H, W)."""
    n, c, h, w = _require_4d(y, "scale_bias")
    if s.shape != (c,) or b.shape != (c,):
        raise ShapeError(f"scale_bias: scale/bias must have shape ({c},), "
                         f"got {s.shape} and {b.shape}")
    s4 = s.reshape((1, c, 1, 1)).expand(y.shape)
    b4 = b.reshape((1, c, 1, 1)).expand(y.shape)
    return y * s4 + b4
