"""HCNN checkpoint files.

Layout (little-endian)::

    "HCNN" | u8 version | descriptor | f64 v | f32 parameters in declaration order

descriptor::

    u16 in_channels | u16 size | u16 num_classes | f64 slope
    u8 num_conv | num_conv * (u16 width, u8 pooled)
    u8 num_fc | num_fc * u16 width
    num_hidden * f64 dropout
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .arch import Architecture
from .network import NetworkParams

MAGIC = b"HCNN"
VERSION = 1
_HEAD = struct.Struct("<4sBHHHd")


def serialize_checkpoint(params: NetworkParams) -> bytes:
    a = params.arch
    out = bytearray(_HEAD.pack(MAGIC, VERSION, a.in_channels, a.size, a.num_classes, a.slope))
    out += struct.pack("<B", a.num_conv)
    for i, w in enumerate(a.conv_widths, 1):
        out += struct.pack("<HB", w, int(i in a.pool_after))
    out += struct.pack("<B", len(a.fc_widths))
    out += struct.pack(f"<{len(a.fc_widths)}H", *a.fc_widths)
    out += struct.pack(f"<{a.num_hidden}d", *a.dropout)
    out += struct.pack("<d", params.input_scale)
    for w, shape in zip(params.weights, a.param_shapes()):
        if w.shape != tuple(shape):
            raise ValueError(f"parameter shape {w.shape} does not match the architecture {shape}")
        out += np.ascontiguousarray(w, dtype="<f4").tobytes()
    return bytes(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        s = struct.Struct(fmt)
        if self.pos + s.size > len(self.data):
            raise ValueError("truncated checkpoint")
        vals = s.unpack_from(self.data, self.pos)
        self.pos += s.size
        return vals


def parse_checkpoint(data: bytes, dtype=np.float32) -> NetworkParams:
    r = _Reader(data)
    magic, version, cin, size, classes, slope = r.take(_HEAD.format)
    if magic != MAGIC:
        raise ValueError("not an HCNN checkpoint")
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (nconv,) = r.take("<B")
    widths, pools = [], []
    for i in range(nconv):
        w, pooled = r.take("<HB")
        widths.append(w)
        if pooled:
            pools.append(i + 1)
    (nfc,) = r.take("<B")
    fc = r.take(f"<{nfc}H")
    dropout = r.take(f"<{nconv + nfc}d")
    (v,) = r.take("<d")
    arch = Architecture(in_channels=cin, size=size, conv_widths=tuple(widths),
                        pool_after=tuple(pools), fc_widths=tuple(fc), num_classes=classes,
                        dropout=tuple(dropout), slope=slope)
    weights = []
    for shape in arch.param_shapes():
        count = int(np.prod(shape))
        if r.pos + 4 * count > len(data):
            raise ValueError("truncated checkpoint parameters")
        w = np.frombuffer(data, dtype="<f4", count=count, offset=r.pos).reshape(shape)
        r.pos += 4 * count
        weights.append(w.astype(dtype))
    if r.pos != len(data):
        raise ValueError("trailing bytes after checkpoint parameters")
    return NetworkParams(arch, weights, v, np.dtype(dtype))


def save_checkpoint(params: NetworkParams, path) -> None:
    Path(path).write_bytes(serialize_checkpoint(params))


def load_checkpoint(path, dtype=np.float32) -> NetworkParams:
    return parse_checkpoint(Path(path).read_bytes(), dtype)
