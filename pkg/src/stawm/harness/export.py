"""Binary PGM/PPM output and canvas-grid composition."""
from __future__ import annotations

import numpy as np


def quantize(values) -> np.ndarray:
    """Map [0, 1] to bytes with round-half-up, so 0.5 becomes 128."""
    values = np.asarray(values, dtype=np.float64)
    if values.size and (np.isnan(values).any() or values.min() < 0.0 or values.max() > 1.0):
        raise ValueError("image values must lie in [0, 1]")
    return np.floor(values * 255.0 + 0.5).astype(np.uint8)


def to_pnm_bytes(matrix) -> bytes:
    """P5 for (H, W) arrays, P6 for (H, W, 3)."""
    arr = np.asarray(matrix)
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3), got {arr.shape}")
    h, w = arr.shape[:2]
    header = magic + f"\n{w} {h}\n255\n".encode("ascii")
    return header + quantize(arr).tobytes()


def write_pnm(matrix, path: str) -> str:
    data = to_pnm_bytes(matrix)
    with open(path, "wb") as f:
        f.write(data)
    return path


export_image = write_pnm


def read_pnm(path: str) -> np.ndarray:
    """Read back a binary P5/P6 file as uint8."""
    with open(path, "rb") as f:
        raw = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    pos += 1  # the single whitespace byte before the raster
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255 or magic not in (b"P5", b"P6"):
        raise ValueError(f"unsupported PNM {magic!r} maxval {maxval}")
    shape = (h, w) if magic == b"P5" else (h, w, 3)
    return np.frombuffer(raw, dtype=np.uint8, count=int(np.prod(shape)), offset=pos).reshape(shape)


def _as_tile(image) -> np.ndarray:
    """(C, H, W) or (H, W) -> (H, W) or (H, W, 3)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[0] == 1:
            return arr[0]
        if arr.shape[0] == 3:
            return np.transpose(arr, (1, 2, 0))
        raise ValueError(f"unsupported channel count {arr.shape[0]}")
    return arr


def compose_grid(rows, pad: int = 1, pad_value: float = 1.0) -> np.ndarray:
    """Tile a list of rows (each a list of equal-sized images) with ``pad`` pixel gutters."""
    tiles = [[_as_tile(img) for img in row] for row in rows]
    if not tiles or not tiles[0]:
        raise ValueError("grid needs at least one tile")
    th, tw = tiles[0][0].shape[:2]
    extra = tiles[0][0].shape[2:]
    n_rows, n_cols = len(tiles), max(len(r) for r in tiles)
    grid = np.full((n_rows * (th + pad) + pad, n_cols * (tw + pad) + pad, *extra), pad_value)
    for r, row in enumerate(tiles):
        for c, tile in enumerate(row):
            if tile.shape != (th, tw, *extra):
                raise ValueError("grid tiles must share one shape")
            y, x = pad + r * (th + pad), pad + c * (tw + pad)
            grid[y:y + th, x:x + tw] = tile
    return grid


def canvas_grid(sequence, targets, pad: int = 1) -> np.ndarray:
    """Images left to right, glimpse steps top to bottom, targets as the last row.

    ``sequence`` holds N canvases of shape (B, C, H, W); the grid has N + 1 rows.
    """
    rows = [[np.clip(img, 0.0, 1.0) for img in step] for step in sequence]
    rows.append([np.clip(img, 0.0, 1.0) for img in targets])
    return compose_grid(rows, pad)
