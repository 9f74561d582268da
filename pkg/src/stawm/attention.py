"""Differentiable affine glimpses: grid generation and bilinear sampling.

Coordinates are normalized to [-1, 1] with -1 and +1 on the centres of the
first and last pixels. An affine transform is six numbers forming the 3x2
matrix ``A`` in ``[x', y'] = [x, y, 1] @ A``; the identity is
``(1, 0, 0, 1, 0, 0)``.
"""
from __future__ import annotations

import numpy as np

from .autodiff import IDENTITY_AFFINE, Tensor, make_result, matmul
from .autodiff.tensor import as_tensor


def identity_affine(batch_size: int | None = None) -> np.ndarray:
    ident = np.array(IDENTITY_AFFINE)
    return ident if batch_size is None else np.tile(ident, (batch_size, 1))


def rotation_affine(angle_rad: float, scale: float = 1.0) -> np.ndarray:
    c, s = np.cos(angle_rad) * scale, np.sin(angle_rad) * scale
    return np.array([c, s, -s, c, 0.0, 0.0])


def base_coordinates(height: int, width: int) -> np.ndarray:
    """(H*W, 3) rows of [x, y, 1] in row-major pixel order."""
    xs = np.linspace(-1.0, 1.0, width) if width > 1 else np.zeros(1)
    ys = np.linspace(-1.0, 1.0, height) if height > 1 else np.zeros(1)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel(), np.ones(height * width)], axis=1)


def affine_grid(affine, height: int, width: int) -> Tensor:
    """Source coordinates (B, H, W, 2) for each output pixel, last axis (x, y)."""
    if height < 1 or width < 1:
        raise ValueError("grid extents must be positive")
    A = as_tensor(affine)
    batched = A.ndim == 2
    if not batched:
        A = A.reshape(1, 6)
    if A.shape[-1] != 6:
        raise ValueError(f"affine parameters must have 6 entries, got {A.shape}")
    batch = A.shape[0]
    base = Tensor(base_coordinates(height, width))
    coords = matmul(base, A.reshape(batch, 3, 2))
    return coords.reshape(batch, height, width, 2)


def _snap(coord: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    nearest = np.rint(coord)
    return np.where(np.abs(coord - nearest) < tol, nearest, coord)


def bilinear_sample(image, grid) -> Tensor:
    """Sample ``image`` (B, C, H, W) at ``grid`` (B, Ho, Wo, 2).

    Pixels outside the image read as zero. Differentiable with respect to both
    the image values and the grid coordinates.
    """
    img, grid = as_tensor(image), as_tensor(grid)
    squeeze = img.ndim == 3
    if squeeze:
        img = img.reshape(1, *img.shape)
    if grid.ndim != 4 or grid.shape[-1] != 2 or grid.shape[0] != img.shape[0]:
        raise ValueError(f"grid shape {grid.shape} does not match image {img.shape}")
    b, c, h, w = img.shape
    _, ho, wo, _ = grid.shape
    g = grid.data.reshape(b, ho * wo, 2)
    ix = (g[..., 0] + 1.0) * 0.5 * (w - 1)
    iy = (g[..., 1] + 1.0) * 0.5 * (h - 1)
    # round-off from the normalized grid must not move pixel-centre hits off-centre
    ix = _snap(ix)
    iy = _snap(iy)
    x0 = np.floor(ix)
    y0 = np.floor(iy)
    fx = ix - x0
    fy = iy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    flat = img.data.reshape(b, c, h * w)

    corners = []
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            yc, xc = y0 + dy, x0 + dx
            valid = (xc >= 0) & (xc < w) & (yc >= 0) & (yc < h)
            idx = np.where(valid, yc * w + xc, 0)
            vals = np.take_along_axis(flat, idx[:, None, :], axis=2) * valid[:, None, :]
            corners.append((dy, dx, wy, wx, idx, valid, vals))

    out = np.zeros((b, c, ho * wo))
    for _, _, wy, wx, _, _, vals in corners:
        out += vals * (wy * wx)[:, None, :]
    out = out.reshape(b, c, ho, wo)

    def grad_fn(grad):
        gflat = grad.reshape(b, c, ho * wo)
        g_img = g_grid = None
        if img.requires_grad:
            acc = np.zeros(b * c * h * w)
            offsets = (np.arange(b)[:, None, None] * c + np.arange(c)[None, :, None]) * (h * w)
            for _, _, wy, wx, idx, valid, _ in corners:
                weight = (wy * wx * valid)[:, None, :] * gflat
                index = offsets + idx[:, None, :]
                acc += np.bincount(index.ravel(), weights=weight.ravel(), minlength=acc.size)
            g_img = acc.reshape(b, c, h, w)
        if grid.requires_grad:
            dix = np.zeros((b, c, ho * wo))
            diy = np.zeros((b, c, ho * wo))
            for dy, dx, wy, wx, _, _, vals in corners:
                sx = 1.0 if dx else -1.0
                sy = 1.0 if dy else -1.0
                dix += vals * (sx * wy)[:, None, :]
                diy += vals * (sy * wx)[:, None, :]
            gx = (gflat * dix).sum(axis=1) * 0.5 * (w - 1)
            gy = (gflat * diy).sum(axis=1) * 0.5 * (h - 1)
            g_grid = np.stack([gx, gy], axis=-1).reshape(b, ho, wo, 2)
        return g_img, g_grid

    result = make_result(out, (img, grid), grad_fn, "bilinear_sample")
    return result.reshape(c, ho, wo) if squeeze else result


def glimpse_forward(image, affine, glimpse_size: int) -> Tensor:
    """Extract a ``glimpse_size`` square patch from (B, C, H, W) images."""
    if glimpse_size < 1:
        raise ValueError("glimpse size must be at least 1")
    grid = affine_grid(affine, glimpse_size, glimpse_size)
    return bilinear_sample(image, grid)


def glimpse_inverse(sketch, affine_inv, height: int, width: int) -> Tensor:
    """Warp (B, C, S, S) sketches onto an image-sized canvas."""
    grid = affine_grid(affine_inv, height, width)
    return bilinear_sample(sketch, grid)
