"""Versioned binary checkpoints.

Layout::

    b"STAWMCKPT"  magic
    u32           format version (little-endian)
    u64           header length in bytes
    header        UTF-8 JSON, keys sorted, compact separators
    payload       every array listed in the header, in order, as little-endian f64

The header carries the config echo, epoch, optimizer scalars, RNG state and
the (name, shape) of every array. Parameters live under ``param/<name>``,
Adam moments under ``adam_m/<name>`` and ``adam_v/<name>``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"STAWMCKPT"
VERSION = 1
_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    params: dict[str, np.ndarray]
    epoch: int = 0
    optimizer: dict = field(default_factory=dict)  # lr, betas, eps, step
    moments: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)
    version: int = VERSION


def _arrays(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    out = [(f"param/{name}", arr) for name, arr in ckpt.params.items()]
    for name, (m, v) in ckpt.moments.items():
        out.append((f"adam_m/{name}", m))
        out.append((f"adam_v/{name}", v))
    return out


def dumps(ckpt: Checkpoint) -> bytes:
    arrays = _arrays(ckpt)
    header = {
        "arrays": [[name, list(np.shape(arr))] for name, arr in arrays],
        "config": ckpt.config,
        "epoch": int(ckpt.epoch),
        "extra": ckpt.extra,
        "optimizer": ckpt.optimizer,
        "rng_state": ckpt.rng_state,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(blob)), blob]
    for _, arr in arrays:
        parts.append(np.ascontiguousarray(arr, dtype=_F64).tobytes())
    return b"".join(parts)


def loads(raw: bytes) -> Checkpoint:
    if not raw.startswith(MAGIC):
        raise CheckpointError("not a checkpoint file (bad magic)")
    offset = len(MAGIC)
    if len(raw) < offset + 12:
        raise CheckpointError("truncated checkpoint header")
    version, length = struct.unpack("<IQ", raw[offset:offset + 12])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    offset += 12
    try:
        header = json.loads(raw[offset:offset + length].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from None
    offset += length

    params, m_parts, v_parts = {}, {}, {}
    for name, shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * _F64.itemsize
        if offset + nbytes > len(raw):
            raise CheckpointError(f"payload truncated at {name}")
        arr = np.frombuffer(raw, dtype=_F64, count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += nbytes
        kind, _, key = name.partition("/")
        {"param": params, "adam_m": m_parts, "adam_v": v_parts}[kind][key] = arr
    if offset != len(raw):
        raise CheckpointError("trailing bytes after payload")
    moments = {k: (m_parts[k], v_parts[k]) for k in m_parts}
    return Checkpoint(header["config"], params, header["epoch"], header["optimizer"], moments,
                      header["rng_state"], header["extra"], version)


def save(ckpt: Checkpoint, path: str) -> None:
    with open(path, "wb") as f:
        f.write(dumps(ckpt))


def load(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        return loads(f.read())
