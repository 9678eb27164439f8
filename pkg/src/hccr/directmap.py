"""Normalization-cooperated direction-decomposed feature maps.

Directions follow the chaincode convention in image coordinates (x right,
y down): direction ``i`` points at ``i * 45`` degrees, so direction 1 is
down-right and ``u[i + 4] == -u[i]``.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .sampleio.formats import OnlineSample
from .shapenorm import CoordinateMap

_R = math.sqrt(0.5)
CHAINCODE = np.array(
    [(1, 0), (_R, _R), (0, 1), (-_R, _R), (-1, 0), (-_R, -_R), (0, -1), (_R, -_R)],
    dtype=np.float64,
)
# cross(u_i, u_{i+1}) for adjacent chaincode vectors
_SIN45 = _R

SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
SOBEL_Y = SOBEL_X.T
IMAGINARY_WEIGHT = 0.5
ONLINE_STEP = 0.5


@dataclass
class DirectMap:
    values: np.ndarray  # (d, n, n) float32, non-negative
    label: int = -1
    code: bytes = b"\x00\x00\x00\x00"
    writer_id: int = 0
    modality: str = "offline"
    clip_fraction: float = 0.0  # not serialized

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, DirectMap):
            return NotImplemented
        return (self.label, self.code, self.writer_id, self.modality) == (
            other.label, other.code, other.writer_id, other.modality
        ) and np.array_equal(self.values, other.values)


def decompose_many(gx, gy):
    """Vectorized parallelogram decomposition.

    Returns ``(i, a, b)`` with ``a * u[i] + b * u[(i + 1) % 8] == (gx, gy)``
    and ``a, b >= 0``. Zero vectors get ``a = b = 0``.
    """
    gx = np.asarray(gx, dtype=np.float64)
    gy = np.asarray(gy, dtype=np.float64)
    theta = np.arctan2(gy, gx)
    sector = np.floor(theta / (math.pi / 4)).astype(np.int64) % 8
    u = CHAINCODE[sector]
    v = CHAINCODE[(sector + 1) % 8]
    a = (gx * v[..., 1] - gy * v[..., 0]) / _SIN45
    b = (u[..., 0] * gy - u[..., 1] * gx) / _SIN45
    # atan2 rounding can land a hair outside the sector
    return sector, np.maximum(a, 0.0), np.maximum(b, 0.0)


def decompose_vector(g):
    """Decompose one 2-D vector onto its two adjacent chaincode directions.

    >>> decompose_vector((2.0, 1.0))
    [(0, 1.0), (1, 1.4142135623730951)]
    """
    gx, gy = float(g[0]), float(g[1])
    if gx == 0.0 and gy == 0.0:
        return []
    i, a, b = decompose_many(gx, gy)
    i = int(i)
    return [(i, float(a)), ((i + 1) % 8, float(b))]


def splat(planes: np.ndarray, plane_idx, u, v, weight) -> None:
    """Bilinear scatter of ``weight`` at continuous positions (u, v) into planes.

    Cell ``j`` has its center at ``j + 0.5``; positions are clamped so that
    all weight stays inside the map.
    """
    d, n, _ = planes.shape
    px = np.clip(np.asarray(u, dtype=np.float64) - 0.5, 0.0, n - 1.0)
    py = np.clip(np.asarray(v, dtype=np.float64) - 0.5, 0.0, n - 1.0)
    x0 = np.minimum(np.floor(px).astype(np.int64), max(n - 2, 0))
    y0 = np.minimum(np.floor(py).astype(np.int64), max(n - 2, 0))
    fx, fy = px - x0, py - y0
    x1 = np.minimum(x0 + 1, n - 1)
    y1 = np.minimum(y0 + 1, n - 1)
    base = np.asarray(plane_idx, dtype=np.int64) * n * n
    w = np.asarray(weight, dtype=np.float64)
    idx = np.concatenate([base + y0 * n + x0, base + y0 * n + x1, base + y1 * n + x0,
                          base + y1 * n + x1])
    wts = np.concatenate([w * (1 - fx) * (1 - fy), w * fx * (1 - fy), w * (1 - fx) * fy,
                          w * fx * fy])
    planes += np.bincount(idx, weights=wts, minlength=planes.size).reshape(planes.shape)


def sobel(field: np.ndarray):
    """Sobel gradients over the field plus a one-pixel ring (edge replicated).

    Returns ``(gx, gy)`` of shape ``(H + 2, W + 2)``; entry ``[r, c]``
    belongs to original pixel ``(r - 1, c - 1)``.
    """
    f = np.pad(np.asarray(field, dtype=np.float64), 2, mode="edge")
    h, w = f.shape[0] - 2, f.shape[1] - 2
    gx = np.zeros((h, w))
    gy = np.zeros((h, w))
    for dy in range(3):
        for dx in range(3):
            win = f[dy:dy + h, dx:dx + w]
            gx += SOBEL_X[dy, dx] * win
            gy += SOBEL_Y[dy, dx] * win
    return gx, gy


def resample(field: np.ndarray, cmap: CoordinateMap, supersample: int = 4) -> np.ndarray:
    """Normalized ``n x n`` image: forward-map sub-pixels and average intensities."""
    field = np.asarray(field, dtype=np.float64)
    h, w = field.shape
    n = cmap.n
    s = supersample
    off = (np.arange(s) + 0.5) / s
    ys = (np.arange(h)[:, None] + off[None, :]).ravel()
    xs = (np.arange(w)[:, None] + off[None, :]).ravel()
    gx, gy = np.meshgrid(xs, ys)
    vals = np.repeat(np.repeat(field, s, axis=0), s, axis=1)
    u, v = cmap(gx, gy)
    num = np.zeros((1, n, n))
    den = np.zeros((1, n, n))
    zero = np.zeros(u.size, dtype=np.int64)
    splat(num, zero, u.ravel(), v.ravel(), vals.ravel())
    splat(den, zero, u.ravel(), v.ravel(), np.ones(u.size))
    out = np.zeros((n, n))
    covered = den[0] > 0
    out[covered] = num[0][covered] / den[0][covered]
    return out


def extract_offline(field: np.ndarray, cmap: CoordinateMap, mode: str = "cooperated",
                    d: int = 8, label: int = -1, code: bytes = b"\x00\x00\x00\x00",
                    writer_id: int = 0) -> DirectMap:
    """Offline directMap from an ink-intensity field.

    ``cooperated`` decomposes the gradient of the original image and maps
    each element through ``cmap``; ``based`` resamples the image first and
    decomposes the gradient of the normalized image.
    """
    if d != 8:
        raise ValueError("only the 8-direction chaincode basis is supported")
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise ValueError(f"expected a 2-D intensity field, got shape {field.shape}")
    n = cmap.n
    planes = np.zeros((d, n, n))
    clipped = 0.0
    if mode == "cooperated":
        gx, gy = sobel(field)
        rows, cols = np.nonzero((gx != 0) | (gy != 0))
        if len(rows):
            i, a, b = decompose_many(gx[rows, cols], gy[rows, cols])
            x = cols - 1 + 0.5
            y = rows - 1 + 0.5
            u, v = cmap.raw(x, y)
            out = (u < 0) | (u > n) | (v < 0) | (v > n)
            mass = a + b
            clipped = float(mass[out].sum() / mass.sum()) if mass.sum() > 0 else 0.0
            u, v = cmap(x, y)
            splat(planes, i, u, v, a)
            splat(planes, (i + 1) % 8, u, v, b)
    elif mode == "based":
        img = resample(field, cmap)
        gx, gy = sobel(img)
        gx, gy = gx[1:-1, 1:-1], gy[1:-1, 1:-1]
        i, a, b = decompose_many(gx, gy)
        rr, cc = np.mgrid[0:n, 0:n]
        flat = rr * n + cc
        np.add.at(planes.reshape(d, -1), (i.ravel(), flat.ravel()), a.ravel())
        np.add.at(planes.reshape(d, -1), ((i.ravel() + 1) % 8, flat.ravel()), b.ravel())
    else:
        raise ValueError(f"unknown extraction mode {mode!r}")
    return DirectMap(planes.astype(np.float32), label, _code4(code), writer_id, "offline", clipped)


def online_segments(strokes):
    """Real and imaginary segments as (start (k,2), end (k,2), weight (k,)) arrays.

    Consecutive duplicate points are dropped; pen-lift connectors between
    strokes carry ``IMAGINARY_WEIGHT``.
    """
    cleaned = []
    for s in strokes:
        s = np.asarray(s, dtype=np.float64).reshape(-1, 2)
        keep = np.ones(len(s), dtype=bool)
        keep[1:] = np.any(s[1:] != s[:-1], axis=1)
        cleaned.append(s[keep])
    starts, ends, wts = [], [], []
    for k, s in enumerate(cleaned):
        if len(s) > 1:
            starts.append(s[:-1])
            ends.append(s[1:])
            wts.append(np.ones(len(s) - 1))
        if k + 1 < len(cleaned):
            a, b = s[-1], cleaned[k + 1][0]
            if np.any(a != b):
                starts.append(a[None])
                ends.append(b[None])
                wts.append(np.array([IMAGINARY_WEIGHT]))
    if not starts:
        return np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0)
    return np.concatenate(starts), np.concatenate(ends), np.concatenate(wts)


def extract_online(sample, cmap: CoordinateMap, d: int = 8) -> DirectMap:
    """Online directMap: decompose each segment and spread it along its image.

    Each segment's weights are split uniformly over sub-segments no longer
    than ``ONLINE_STEP`` in the normalized plane and splatted at their
    midpoints.
    """
    if d != 8:
        raise ValueError("only the 8-direction chaincode basis is supported")
    strokes = sample.strokes if isinstance(sample, OnlineSample) else sample
    n = cmap.n
    planes = np.zeros((d, n, n))
    p0, p1, wt = online_segments(strokes)
    clipped = 0.0
    if len(wt):
        g = p1 - p0
        i, a, b = decompose_many(g[:, 0], g[:, 1])
        u0, v0 = cmap.raw(p0[:, 0], p0[:, 1])
        u1, v1 = cmap.raw(p1[:, 0], p1[:, 1])
        chord = np.hypot(u1 - u0, v1 - v0)
        k = np.maximum(1, np.ceil(chord / ONLINE_STEP)).astype(np.int64)
        seg = np.repeat(np.arange(len(k)), k)
        first = np.concatenate([[0], np.cumsum(k)[:-1]])
        t = (np.arange(k.sum()) - first[seg] + 0.5) / k[seg]
        x = p0[seg, 0] + t * g[seg, 0]
        y = p0[seg, 1] + t * g[seg, 1]
        share = wt[seg] / k[seg]
        ru, rv = cmap.raw(x, y)
        out = (ru < 0) | (ru > n) | (rv < 0) | (rv > n)
        mass = share * (a[seg] + b[seg])
        clipped = float(mass[out].sum() / mass.sum()) if mass.sum() > 0 else 0.0
        u, v = cmap(x, y)
        splat(planes, i[seg], u, v, share * a[seg])
        splat(planes, (i[seg] + 1) % 8, u, v, share * b[seg])
    label = getattr(sample, "label", -1)
    code = getattr(sample, "code", b"\x00\x00\x00\x00")
    writer = getattr(sample, "writer_id", 0)
    return DirectMap(planes.astype(np.float32), label, _code4(code), writer, "online", clipped)


def sparsity(dm) -> float:
    values = dm.values if isinstance(dm, DirectMap) else np.asarray(dm)
    return float(np.count_nonzero(values == 0) / values.size)


def average_map(dm) -> np.ndarray:
    values = dm.values if isinstance(dm, DirectMap) else np.asarray(dm)
    return values.mean(axis=0)


# ---------------------------------------------------------------------------
# DMAP sparse container

DMAP_MAGIC = b"DMAP"
DMAP_VERSION = 1
_DMAP_HEADER = struct.Struct("<4sBBHBi4sII")  # magic ver d n modality label code writer count
_DMAP_CELL = struct.Struct("<BBBf")
_MODALITY = {"offline": 0, "online": 1}


def _code4(code: bytes) -> bytes:
    code = bytes(code)
    if len(code) > 4:
        raise ValueError("label code longer than 4 bytes")
    return code.ljust(4, b"\x00")


def serialize_dmap(dm: DirectMap) -> bytes:
    d, n = dm.d, dm.n
    if not (1 <= d <= 255 and 1 <= n <= 256):
        raise ValueError("DMAP supports d <= 255 and n <= 256")
    values = np.asarray(dm.values, dtype=np.float32)
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise ValueError("directMap values must be finite and non-negative")
    planes, rows, cols = np.nonzero(values)
    header = _DMAP_HEADER.pack(DMAP_MAGIC, DMAP_VERSION, d, n, _MODALITY[dm.modality], dm.label,
                               _code4(dm.code), dm.writer_id, len(planes))
    cells = np.zeros(len(planes), dtype=[("p", "u1"), ("r", "u1"), ("c", "u1"), ("v", "<f4")])
    cells["p"], cells["r"], cells["c"] = planes, rows, cols
    cells["v"] = values[planes, rows, cols]
    return header + cells.tobytes()


def parse_dmap(data: bytes) -> DirectMap:
    if len(data) < _DMAP_HEADER.size:
        raise ValueError("truncated DMAP header")
    magic, ver, d, n, modality, label, code, writer, count = _DMAP_HEADER.unpack_from(data, 0)
    if magic != DMAP_MAGIC:
        raise ValueError("not a DMAP file")
    if ver != DMAP_VERSION:
        raise ValueError(f"unsupported DMAP version {ver}")
    if modality not in (0, 1) or d == 0 or n == 0:
        raise ValueError("invalid DMAP header")
    if len(data) != _DMAP_HEADER.size + count * _DMAP_CELL.size:
        raise ValueError(f"DMAP cell count {count} does not match the payload size")
    cells = np.frombuffer(data, offset=_DMAP_HEADER.size,
                          dtype=[("p", "u1"), ("r", "u1"), ("c", "u1"), ("v", "<f4")], count=count)
    p = cells["p"].astype(np.int64)
    r = cells["r"].astype(np.int64)
    c = cells["c"].astype(np.int64)
    if count and (p.max() >= d or r.max() >= n or c.max() >= n):
        raise ValueError("DMAP cell index out of range")
    flat = (p * n + r) * n + c
    if count > 1 and np.any(np.diff(flat) <= 0):
        raise ValueError("DMAP cells not in strictly increasing order")
    v = cells["v"]
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise ValueError("DMAP cell values must be finite and positive")
    values = np.zeros((d, n, n), dtype=np.float32)
    values[p, r, c] = v
    mod = "offline" if modality == 0 else "online"
    return DirectMap(values, label, code, writer, mod)
