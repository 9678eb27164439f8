"""CASIA-style GNT (offline) and POT (online) sample containers.

GNT record::

    u32 record_size | 2-byte tag | u16 width | u16 height | width*height gray bytes

POT record::

    u16 sample_size | 4-byte tag | u16 stroke_count | (i16 x, i16 y)* ...

Inside a POT record ``(-1, 0)`` terminates a stroke and ``(-1, -1)`` the
character. All integers are little-endian.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

GNT_HEADER = struct.Struct("<I2sHH")
POT_HEADER = struct.Struct("<H4sH")
STROKE_END = (-1, 0)
CHAR_END = (-1, -1)


class FormatError(ValueError):
    """Malformed container data. ``offset`` is the byte offset of the bad record."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class OfflineSample:
    width: int
    height: int
    gray: np.ndarray  # (height, width) uint8, background 255
    code: bytes = b"\x00\x00"
    label: int = -1
    writer_id: int = 0

    def __post_init__(self):
        self.gray = np.asarray(self.gray, dtype=np.uint8).reshape(self.height, self.width)
        if self.width < 1 or self.height < 1:
            raise ValueError("image dimensions must be positive")

    def __eq__(self, other):
        if not isinstance(other, OfflineSample):
            return NotImplemented
        return (self.width, self.height, self.code, self.label, self.writer_id) == (
            other.width, other.height, other.code, other.label, other.writer_id
        ) and np.array_equal(self.gray, other.gray)


@dataclass
class OnlineSample:
    strokes: list  # list of (k, 2) int arrays, x right / y down
    code: bytes = b"\x00\x00\x00\x00"
    label: int = -1
    writer_id: int = 0

    def __post_init__(self):
        self.strokes = [np.asarray(s, dtype=np.int64).reshape(-1, 2) for s in self.strokes]
        if not self.strokes:
            raise ValueError("an online sample needs at least one stroke")
        for s in self.strokes:
            if len(s) == 0:
                raise ValueError("empty stroke")

    @property
    def num_points(self) -> int:
        return sum(len(s) for s in self.strokes)

    def __eq__(self, other):
        if not isinstance(other, OnlineSample):
            return NotImplemented
        if (self.code, self.label, self.writer_id) != (other.code, other.label, other.writer_id):
            return False
        return len(self.strokes) == len(other.strokes) and all(
            np.array_equal(a, b) for a, b in zip(self.strokes, other.strokes)
        )


def parse_gnt(data: bytes, writer_id: int = 0) -> list[OfflineSample]:
    return [s for _, s in iter_gnt(data, writer_id)]


def iter_gnt(data: bytes, writer_id: int = 0):
    """Yield ``(offset, OfflineSample)`` for every record in ``data``."""
    view = memoryview(data)
    pos, end = 0, len(data)
    while pos < end:
        if end - pos < GNT_HEADER.size:
            raise FormatError("truncated GNT header", pos)
        size, tag, width, height = GNT_HEADER.unpack_from(view, pos)
        if width == 0 or height == 0:
            raise FormatError(f"zero image dimension {width}x{height}", pos)
        expected = GNT_HEADER.size + width * height
        if size != expected:
            raise FormatError(f"record_size {size} != 10 + {width}*{height}", pos)
        if pos + size > end:
            raise FormatError("truncated GNT pixel block", pos)
        gray = np.frombuffer(view[pos + GNT_HEADER.size:pos + size], dtype=np.uint8).copy()
        yield pos, OfflineSample(width, height, gray, code=bytes(tag), writer_id=writer_id)
        pos += size


def read_gnt_record(data: bytes, offset: int, writer_id: int = 0) -> OfflineSample:
    """Parse the single GNT record starting at ``offset``."""
    if len(data) - offset < GNT_HEADER.size:
        raise FormatError("truncated GNT header", offset)
    size = GNT_HEADER.unpack_from(data, offset)[0]
    _, sample = next(iter_gnt(data[offset:offset + size], writer_id))
    return sample


def serialize_gnt(samples) -> bytes:
    out = bytearray()
    for s in samples:
        if len(s.code) != 2:
            raise ValueError("GNT tag must be exactly 2 bytes")
        out += GNT_HEADER.pack(GNT_HEADER.size + s.width * s.height, s.code, s.width, s.height)
        out += np.ascontiguousarray(s.gray, dtype=np.uint8).tobytes()
    return bytes(out)


def _pot_record(view, pos: int, end: int, writer_id: int):
    if end - pos < POT_HEADER.size:
        raise FormatError("truncated POT header", pos)
    size, tag, nstrokes = POT_HEADER.unpack_from(view, pos)
    if size < POT_HEADER.size + 4 or pos + size > end:
        raise FormatError(f"sample_size {size} exceeds available data or is too small", pos)
    if (size - POT_HEADER.size) % 4:
        raise FormatError("sample_size does not hold whole points", pos)
    pts = np.frombuffer(view[pos + POT_HEADER.size:pos + size], dtype="<i2").reshape(-1, 2)
    if tuple(pts[-1]) != CHAR_END:
        raise FormatError("record does not end with the (-1, -1) terminator", pos)
    pts = pts[:-1]
    is_end = (pts[:, 0] == -1) & (pts[:, 1] == 0)
    if ((pts[:, 0] == -1) & (pts[:, 1] == -1)).any():
        raise FormatError("character terminator inside the record", pos)
    ends = np.flatnonzero(is_end)
    if len(ends) != nstrokes:
        raise FormatError(f"declared {nstrokes} strokes, found {len(ends)} stroke terminators", pos)
    if len(ends) == 0 or ends[-1] != len(pts) - 1:
        raise FormatError("points after the last stroke terminator", pos)
    strokes, start = [], 0
    for e in ends:
        if e == start:
            raise FormatError("empty stroke", pos)
        strokes.append(pts[start:e].astype(np.int64))
        start = e + 1
    return size, OnlineSample(strokes, code=bytes(tag), writer_id=writer_id)


def iter_pot(data: bytes, writer_id: int = 0):
    view = memoryview(data)
    pos, end = 0, len(data)
    while pos < end:
        size, sample = _pot_record(view, pos, end, writer_id)
        yield pos, sample
        pos += size


def parse_pot(data: bytes, writer_id: int = 0) -> list[OnlineSample]:
    return [s for _, s in iter_pot(data, writer_id)]


def read_pot_record(data: bytes, offset: int, writer_id: int = 0) -> OnlineSample:
    return _pot_record(memoryview(data), offset, len(data), writer_id)[1]


def serialize_pot(samples) -> bytes:
    out = bytearray()
    for s in samples:
        if len(s.code) != 4:
            raise ValueError("POT tag must be exactly 4 bytes")
        chunks = []
        for stroke in s.strokes:
            xy = np.asarray(stroke, dtype=np.int64)
            if xy.min() < -32768 or xy.max() > 32767:
                raise ValueError("coordinate outside signed 16-bit range")
            if ((xy[:, 0] == -1) & ((xy[:, 1] == 0) | (xy[:, 1] == -1))).any():
                raise ValueError("stroke contains a reserved sentinel coordinate")
            chunks.append(xy)
            chunks.append(np.array([STROKE_END]))
        chunks.append(np.array([CHAR_END]))
        body = np.concatenate(chunks).astype("<i2").tobytes()
        size = POT_HEADER.size + len(body)
        if size > 0xFFFF:
            raise ValueError("POT record larger than 65535 bytes")
        out += POT_HEADER.pack(size, s.code, len(s.strokes)) + body
    return bytes(out)
