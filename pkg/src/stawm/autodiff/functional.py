"""Convolution, dropout and recurrent primitives built on :mod:`.tensor`."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor, as_tensor, concat, make_result, matmul, mul, sigmoid, tanh


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv_transpose_output_size(size: int, kernel: int, stride: int, padding: int,
                               output_padding: int = 0) -> int:
    return (size - 1) * stride - 2 * padding + kernel + output_padding


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """(B, C, Hp, Wp) -> (B*oh*ow, C*kh*kw)."""
    b, c = xp.shape[:2]
    cols = np.empty((b, oh, ow, c, kh, kw), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
            cols[:, :, :, :, i, j] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(b * oh * ow, c * kh * kw)


def _col2im(cols: np.ndarray, padded_shape: tuple, kh: int, kw: int, stride: int,
            oh: int, ow: int) -> np.ndarray:
    """Adjoint of :func:`_im2col`."""
    b, c = padded_shape[:2]
    cols = cols.reshape(b, oh, ow, c, kh, kw)
    out = np.zeros(padded_shape, dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return out


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def _crop(x: np.ndarray, padding: int, h: int, w: int) -> np.ndarray:
    return x[:, :, padding:padding + h, padding:padding + w]


def conv2d(x, kernel, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with an (O, C, kH, kW) kernel."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if stride < 1 or padding < 0:
        raise ValueError("stride must be positive and padding non-negative")
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv2d expects NCHW input and OCkk kernel")
    b, c, h, w = x.shape
    o, kc, kh, kw = kernel.shape
    if kc != c:
        raise ValueError(f"conv2d: input has {c} channels, kernel expects {kc}")
    oh, ow = conv_output_size(h, kh, stride, padding), conv_output_size(w, kw, stride, padding)
    if oh < 1 or ow < 1:
        raise ValueError(f"conv2d: degenerate output extent {oh}x{ow}")
    xp = _pad(x.data, padding)
    cols = _im2col(xp, kh, kw, stride, oh, ow)
    k2 = kernel.data.reshape(o, -1)
    out = (cols @ k2.T).reshape(b, oh, ow, o).transpose(0, 3, 1, 2)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def grad_fn(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, o)
        gx = None
        if x.requires_grad:
            gxp = _col2im(g2 @ k2, xp.shape, kh, kw, stride, oh, ow)
            gx = _crop(gxp, padding, h, w)
        gk = (g2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_result(np.ascontiguousarray(out), parents, grad_fn, "conv2d")


def conv2d_transpose(x, kernel, bias=None, stride: int = 1, padding: int = 0,
                     output_padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d`; kernel layout (C_in, C_out, kH, kW)."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if stride < 1 or padding < 0 or output_padding < 0 or (output_padding and output_padding >= stride):
        raise ValueError("invalid stride/padding/output_padding")
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError("conv2d_transpose expects NCHW input and 4-d kernel")
    b, cin, h, w = x.shape
    kcin, cout, kh, kw = kernel.shape
    if kcin != cin:
        raise ValueError(f"conv2d_transpose: input has {cin} channels, kernel expects {kcin}")
    oh = conv_transpose_output_size(h, kh, stride, padding, output_padding)
    ow = conv_transpose_output_size(w, kw, stride, padding, output_padding)
    if oh < 1 or ow < 1:
        raise ValueError(f"conv2d_transpose: degenerate output extent {oh}x{ow}")
    hp, wp = oh + 2 * padding, ow + 2 * padding
    k2 = kernel.data.reshape(cin, -1)
    x2 = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    full = _col2im(x2 @ k2, (b, cout, hp, wp), kh, kw, stride, h, w)
    out = _crop(full, padding, oh, ow)
    parents = [x, kernel]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data[None, :, None, None]
        parents.append(bias)

    def grad_fn(g):
        gp = np.zeros((b, cout, hp, wp), dtype=g.dtype)
        gp[:, :, padding:padding + oh, padding:padding + ow] = g
        cols = _im2col(gp, kh, kw, stride, h, w)
        gx = (cols @ k2.T).reshape(b, h, w, cin).transpose(0, 3, 1, 2) if x.requires_grad else None
        gk = (x2.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        grads = [gx, gk]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    return make_result(np.ascontiguousarray(out), parents, grad_fn, "conv2d_transpose")


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    x = as_tensor(x)
    if not training or rate <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return mul(x, Tensor(keep))


def lstm_cell_step(x, h, c, w_ih, w_hh, bias) -> tuple[Tensor, Tensor]:
    """One LSTM step with gate order (i, f, g, o).

    ``w_ih`` is (in, 4H), ``w_hh`` is (H, 4H), ``bias`` is (4H,).
    """
    x, h, c = as_tensor(x), as_tensor(h), as_tensor(c)
    hidden = h.shape[-1]
    if c.shape != h.shape or w_hh.shape != (hidden, 4 * hidden) or bias.shape != (4 * hidden,):
        raise ValueError("lstm_cell_step: hidden extents disagree")
    if w_ih.shape != (x.shape[-1], 4 * hidden):
        raise ValueError("lstm_cell_step: input extent does not match w_ih")
    gates = matmul(x, w_ih) + matmul(h, w_hh) + bias
    i = sigmoid(gates[..., 0:hidden])
    f = sigmoid(gates[..., hidden:2 * hidden])
    g = tanh(gates[..., 2 * hidden:3 * hidden])
    o = sigmoid(gates[..., 3 * hidden:4 * hidden])
    c_next = f * c + i * g
    h_next = o * tanh(c_next)
    return h_next, c_next


def flatten(x) -> Tensor:
    x = as_tensor(x)
    return x.reshape(x.shape[0], -1)


__all__ = [
    "concat", "conv2d", "conv2d_transpose", "conv_output_size", "conv_transpose_output_size",
    "dropout", "flatten", "lstm_cell_step",
]
