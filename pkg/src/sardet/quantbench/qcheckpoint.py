"""Quantized checkpoint container.

Same framing as the float checkpoint with magic ``SDQ8``; every tensor
record carries a dtype byte after its name, and the tensor table is
followed by the quantization parameter records::

    ... | u32 n_tensors | per tensor: u16 name length, name, u8 dtype
      (0 f32, 1 int8, 2 int32), u8 rank, u32 dims[rank], data
    | u32 n_qparams | per record: u16 name length, name, u8 granularity
      (0 tensor, 1 channel), u32 count, f32 scale[count], i32 zero_point[count]

Requantization multipliers are derived from the stored scales on load.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import FormatError
from ..nncore.checkpoint import VERSION, Reader, describe, pack_config, pack_metadata, \
    read_config, read_metadata
from ..nncore.model import Model
from .quantize import QAdd, QBlock, QConv, QuantizedModel
from .qparams import QuantParams

MAGIC = b"SDQ8"
DTYPES = ("<f4", "<i1", "<i4")


def _pack_tensor(name, arr):
    code = {np.dtype(np.float32): 0, np.dtype(np.int8): 1, np.dtype(np.int32): 2}[arr.dtype]
    raw = name.encode()
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<BB", code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()


def _pack_qparams(name, p: QuantParams):
    scale = np.atleast_1d(np.asarray(p.scale32, dtype="<f4"))
    zp = np.atleast_1d(np.asarray(p.zero_point, dtype="<i4"))
    raw = name.encode()
    return (struct.pack("<H", len(raw)) + raw
            + struct.pack("<BI", 0 if p.granularity == "tensor" else 1, scale.size)
            + scale.tobytes() + zp.tobytes())


def _records(qm: QuantizedModel):
    tensors, qparams = {}, {"input": qm.input_params}
    for name, conv in qm.convs():
        tensors[f"{name}.qweight"] = conv.qweight
        tensors[f"{name}.qbias"] = conv.qbias
        qparams[f"{name}.weight"] = conv.wparams
    qparams["stem"] = qm.stem.out_params
    for b in qm.blocks:
        qparams[f"{b.name}.h1"] = b.conv1.out_params
        qparams[f"{b.name}.h2"] = b.conv2.out_params
        if b.shortcut is not None:
            qparams[f"{b.name}.sc"] = b.shortcut.out_params
        qparams[f"{b.name}.out"] = b.add.out_params
    return tensors, qparams


def encode_qcheckpoint(qm: QuantizedModel, metadata=None) -> bytes:
    tensors, qparams = _records(qm)
    parts = [MAGIC, struct.pack("<I", VERSION), pack_config(qm.config),
             pack_metadata(metadata or {}), struct.pack("<I", len(tensors))]
    parts += [_pack_tensor(n, a) for n, a in tensors.items()]
    parts.append(struct.pack("<I", len(qparams)))
    parts += [_pack_qparams(n, p) for n, p in qparams.items()]
    return b"".join(parts)


def save_qcheckpoint(qm, path, metadata=None):
    Path(path).write_bytes(encode_qcheckpoint(qm, metadata))


def _read_tensor(r: Reader):
    (n,) = r.unpack("H", "tensor name length")
    name = r.take(n, "tensor name").decode()
    at = r.pos
    code, rank = r.unpack("BB", f"dtype/rank of {name}")
    if code >= len(DTYPES):
        r.fail(f"tensor {name!r} has unknown dtype code {code}", at)
    dims = r.unpack(f"{rank}I", f"dims of {name}")
    dt = np.dtype(DTYPES[code])
    count = int(np.prod(dims)) if rank else 1
    data = np.frombuffer(r.take(count * dt.itemsize, f"data of {name}"), dtype=dt)
    return name, data.reshape(dims).astype(dt.newbyteorder("="))


def _read_qparams(r: Reader):
    (n,) = r.unpack("H", "qparam name length")
    name = r.take(n, "qparam name").decode()
    at = r.pos
    gran, count = r.unpack("BI", f"qparam header of {name}")
    if gran > 1:
        r.fail(f"qparam {name!r} has unknown granularity {gran}", at)
    scale = np.frombuffer(r.take(4 * count, f"scales of {name}"), dtype="<f4").astype(np.float32)
    zp = np.frombuffer(r.take(4 * count, f"zero points of {name}"), dtype="<i4").astype(np.int32)
    try:
        if gran == 0:
            if count != 1:
                r.fail(f"per-tensor qparam {name!r} holds {count} values", at)
            return name, QuantParams(float(scale[0]), int(zp[0]))
        return name, QuantParams(scale, zp, "channel")
    except ValueError as exc:
        r.fail(f"invalid qparam {name!r}: {exc}", at)


def decode_qcheckpoint(buf: bytes, path=None):
    """Returns ``(QuantizedModel, metadata)``."""
    r = Reader(buf, path)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        r.fail(f"bad magic {magic!r}, expected {MAGIC!r}", 0)
    (version,) = r.unpack("I", "version")
    if version != VERSION:
        r.fail(f"unsupported checkpoint version {version}", 4)
    cfg = read_config(r)
    meta = read_metadata(r)
    tensors, qparams = {}, {}
    (nt,) = r.unpack("I", "tensor count")
    for _ in range(nt):
        at = r.pos
        name, arr = _read_tensor(r)
        if name in tensors:
            r.fail(f"duplicate tensor {name!r}", at)
        tensors[name] = arr
    (nq,) = r.unpack("I", "qparam count")
    for _ in range(nq):
        at = r.pos
        name, p = _read_qparams(r)
        if name in qparams:
            r.fail(f"duplicate qparam {name!r}", at)
        qparams[name] = p
    r.finish()
    try:
        return assemble(cfg, tensors, qparams), meta
    except KeyError as exc:
        raise FormatError(f"{describe(cfg)} quantized model is missing record {exc}",
                          path, len(buf)) from None
    except ValueError as exc:
        raise FormatError(str(exc), path, len(buf)) from None


def assemble(cfg, tensors, qparams) -> QuantizedModel:
    skeleton = Model(cfg)  # topology only: strides and shortcut placement

    shapes = {n[:-len(".weight")]: p.data.shape for n, p in skeleton.named_params()
              if n.endswith("conv.weight") or n.endswith("conv1.weight")
              or n.endswith("conv2.weight") or n == "head.weight"}

    def conv(name, stride, in_p, out_p=None, relu=False):
        key = {"stem": "stem.conv", "head": "head"}.get(name, name)
        key = key if not key.endswith(".shortcut") else key + ".conv"
        got = tensors[f"{name}.qweight"].shape
        if got != shapes[key]:
            raise ValueError(f"tensor {name}.qweight has shape {got}, model expects {shapes[key]}")
        return QConv(tensors[f"{name}.qweight"].astype(np.int8),
                     qparams[f"{name}.weight"], tensors[f"{name}.qbias"].astype(np.int32),
                     stride, in_p, out_p, relu)

    a = qparams
    stem = conv("stem", 2, a["input"], a["stem"], True)
    blocks, prev = [], a["stem"]
    names = [n for n, _ in skeleton.named_children() if n.startswith("layer")]
    for name, blk in zip(names, skeleton.blocks()):
        c1 = conv(f"{name}.conv1", blk.stride, prev, a[f"{name}.h1"], True)
        c2 = conv(f"{name}.conv2", 1, a[f"{name}.h1"], a[f"{name}.h2"])
        if blk.shortcut is not None:
            sc, sc_p = conv(f"{name}.shortcut", blk.stride, prev, a[f"{name}.sc"]), a[f"{name}.sc"]
        else:
            sc, sc_p = None, prev
        blocks.append(QBlock(name, c1, c2, sc, QAdd(a[f"{name}.h2"], sc_p, a[f"{name}.out"])))
        prev = a[f"{name}.out"]
    return QuantizedModel(cfg, a["input"], stem, blocks, conv("head", 1, prev))


def load_qcheckpoint(path):
    return decode_qcheckpoint(Path(path).read_bytes(), path)
