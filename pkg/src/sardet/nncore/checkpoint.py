"""Checkpoint container.

Little-endian layout::

    magic (4 bytes) | u32 version
    | config: u8 size_tag, u32 blocks[4], u32 channels[4], u8 n_classes,
      u32 crop, u32 stem_channels
    | u32 metadata length | metadata (UTF-8 JSON: epochs, seed, threshold, ...)
    | u32 n_tensors | per tensor: u16 name length, name, u8 rank, u32 dims[rank],
      f32 data

The quantized container reuses this framing with magic ``SDQ8`` (see
``sardet.quantbench.qcheckpoint``).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .model import Model, ModelConfig, build_model

MAGIC = b"SDCP"
VERSION = 1
SIZE_TAGS = ("S", "M", "L", "CUSTOM")
_CONFIG = struct.Struct("<B4I4IBII")


class Reader:
    """Bounds-checked sequential reader that reports byte offsets."""

    def __init__(self, buf: bytes, path=None):
        self.buf = buf
        self.pos = 0
        self.path = path

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(f"truncated while reading {what}: need {n} bytes, "
                              f"{len(self.buf) - self.pos} left", self.path, self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size, what))

    def fail(self, message, offset=None):
        raise FormatError(message, self.path, self.pos if offset is None else offset)

    def finish(self):
        if self.pos != len(self.buf):
            self.fail(f"{len(self.buf) - self.pos} trailing bytes")


def pack_config(cfg: ModelConfig) -> bytes:
    return _CONFIG.pack(SIZE_TAGS.index(cfg.size_tag), *cfg.blocks_per_layer,
                        *cfg.channels_per_layer, cfg.n_classes, cfg.crop, cfg.stem_channels)


def read_config(r: Reader) -> ModelConfig:
    start = r.pos
    fields = _CONFIG.unpack(r.take(_CONFIG.size, "model config"))
    tag_idx, blocks, chans = fields[0], fields[1:5], fields[5:9]
    n_classes, crop, stem = fields[9:12]
    if tag_idx >= len(SIZE_TAGS):
        r.fail(f"unknown size tag {tag_idx}", start)
    try:
        return ModelConfig(SIZE_TAGS[tag_idx], blocks, chans, n_classes, crop, stem)
    except ValueError as exc:
        r.fail(f"invalid model config: {exc}", start)


def pack_metadata(meta: dict) -> bytes:
    blob = json.dumps(meta, sort_keys=True).encode()
    return struct.pack("<I", len(blob)) + blob


def read_metadata(r: Reader) -> dict:
    (n,) = r.unpack("I", "metadata length")
    start = r.pos
    try:
        return json.loads(r.take(n, "metadata").decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        r.fail(f"metadata is not valid JSON: {exc}", start)


def pack_tensor(name: str, arr: np.ndarray, dtype="<f4") -> bytes:
    raw = name.encode()
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=dtype).tobytes()


def read_tensor(r: Reader, dtype="<f4"):
    (n,) = r.unpack("H", "tensor name length")
    name = r.take(n, "tensor name").decode()
    (rank,) = r.unpack("B", f"rank of {name}")
    dims = r.unpack(f"{rank}I", f"dims of {name}")
    count = int(np.prod(dims)) if rank else 1
    itemsize = np.dtype(dtype).itemsize
    data = np.frombuffer(r.take(count * itemsize, f"data of {name}"), dtype=dtype)
    return name, data.reshape(dims).copy()


def encode_checkpoint(model: Model, metadata=None, magic=MAGIC) -> bytes:
    parts = [magic, struct.pack("<I", VERSION), pack_config(model.config),
             pack_metadata(metadata or {})]
    state = model.state()
    parts.append(struct.pack("<I", len(state)))
    parts.extend(pack_tensor(name, arr) for name, arr in state.items())
    return b"".join(parts)


def save_checkpoint(model: Model, path, metadata=None):
    Path(path).write_bytes(encode_checkpoint(model, metadata))


def decode_checkpoint(buf: bytes, path=None, expect_config: ModelConfig | None = None):
    """Returns ``(model, metadata)``."""
    r = Reader(buf, path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        r.fail(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = r.unpack("I", "version")
    if version != VERSION:
        r.fail(f"unsupported checkpoint version {version}", 4)
    cfg = read_config(r)
    if expect_config is not None and cfg != expect_config:
        raise FormatError(f"config mismatch: checkpoint holds {describe(cfg)}, "
                          f"expected {describe(expect_config)}", path, 8)
    meta = read_metadata(r)
    (n,) = r.unpack("I", "tensor count")
    model = build_model(cfg)
    state = model.state()
    seen = set()
    for _ in range(n):
        at = r.pos
        name, arr = read_tensor(r)
        if name in seen:
            r.fail(f"duplicate tensor {name!r}", at)
        seen.add(name)
        if name not in state:
            r.fail(f"tensor {name!r} does not belong to a {describe(cfg)} model", at)
        if arr.shape != state[name].shape:
            r.fail(f"tensor {name!r} has shape {arr.shape}, model expects {state[name].shape}", at)
        np.copyto(state[name], arr)
    missing = set(state) - seen
    if missing:
        r.fail(f"missing tensors: {sorted(missing)[:5]}")
    r.finish()
    return model, meta


def load_checkpoint(path, expect_config: ModelConfig | None = None):
    return decode_checkpoint(Path(path).read_bytes(), path, expect_config)


def describe(cfg: ModelConfig) -> str:
    return (f"{cfg.size_tag} (blocks {cfg.blocks_per_layer}, channels {cfg.channels_per_layer}, "
            f"n_classes {cfg.n_classes}, crop {cfg.crop})")
