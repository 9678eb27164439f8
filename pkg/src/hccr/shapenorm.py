"""Gray-level normalization and shape-normalization coordinate mappings.

Every fit returns a :class:`CoordinateMap`, a continuous monotone mapping
from original character coordinates to the ``n x n`` target square. Pixel
``(row i, col j)`` of an image occupies ``[j, j+1) x [i, i+1)`` with its
center at ``(j + 0.5, i + 0.5)``; trajectories use their own coordinates.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .sampleio.formats import OfflineSample, OnlineSample


class GrayMode(str, enum.Enum):
    NONE = "none"
    LINEAR = "linear"
    NONLINEAR = "nonlinear"


class AspectMode(str, enum.Enum):
    PRESERVE = "preserve"
    FILL = "fill"
    ADAPTIVE = "adaptive"


class DegenerateError(ValueError):
    """The input carries no usable mass or extent for the requested mapping."""


# lowest foreground level after linear normalization: one gray step
_LINEAR_FLOOR = 1.0 / 255.0


def gray_normalize(image, mode=GrayMode.NONLINEAR) -> np.ndarray:
    """Return an ink-intensity field: background 0, foreground in (0, 1].

    ``image`` is an :class:`OfflineSample` or a uint8 array stored with
    background 255 (levels are reversed first). A float array is taken as an
    already reversed intensity field, which makes ``none`` and ``linear``
    idempotent.
    """
    mode = GrayMode(mode)
    if isinstance(image, OfflineSample):
        image = image.gray
    image = np.asarray(image)
    if image.dtype == np.uint8:
        ink = (255.0 - image.astype(np.float64)) / 255.0
    else:
        ink = np.asarray(image, dtype=np.float64).copy()
    if mode is GrayMode.NONE:
        return ink
    fg = ink > 0
    if not fg.any():
        return ink
    lo, hi = ink[fg].min(), ink[fg].max()
    out = np.zeros_like(ink)
    if hi == lo:
        out[fg] = 1.0
    else:
        out[fg] = _LINEAR_FLOOR + (ink[fg] - lo) * (1.0 - _LINEAR_FLOOR) / (hi - lo)
    if mode is GrayMode.NONLINEAR:
        out = np.sqrt(out)
    return out


# ---------------------------------------------------------------------------
# mass representation


@dataclass
class PointMass:
    """Weighted 2-D point cloud plus the bounding box of its support."""

    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    box: tuple  # (x0, x1, y0, y1)

    @property
    def total(self) -> float:
        return float(self.w.sum())


def field_mass(field: np.ndarray) -> PointMass:
    field = np.asarray(field, dtype=np.float64)
    rows, cols = np.nonzero(field)
    if len(rows) == 0:
        raise DegenerateError("field has zero mass")
    w = field[rows, cols]
    box = (float(cols.min()), float(cols.max() + 1), float(rows.min()), float(rows.max() + 1))
    return PointMass(cols + 0.5, rows + 0.5, w, box)


def trajectory_mass(strokes, step: float = 0.5) -> PointMass:
    """Arc-length mass of the real strokes, sampled every ``step`` units."""
    if isinstance(strokes, OnlineSample):
        strokes = strokes.strokes
    xs, ys, ws = [], [], []
    allpts = np.concatenate([np.asarray(s, dtype=np.float64) for s in strokes])
    for s in strokes:
        s = np.asarray(s, dtype=np.float64)
        for a, b in zip(s[:-1], s[1:]):
            length = math.hypot(*(b - a))
            if length == 0.0:
                continue
            k = max(1, math.ceil(length / step))
            t = (np.arange(k) + 0.5) / k
            xs.append(a[0] + t * (b[0] - a[0]))
            ys.append(a[1] + t * (b[1] - a[1]))
            ws.append(np.full(k, length / k))
    if not xs:
        # only isolated dots: unit mass per point
        xs, ys, ws = [allpts[:, 0]], [allpts[:, 1]], [np.ones(len(allpts))]
    box = (allpts[:, 0].min(), allpts[:, 0].max(), allpts[:, 1].min(), allpts[:, 1].max())
    return PointMass(np.concatenate(xs), np.concatenate(ys), np.concatenate(ws),
                     tuple(float(v) for v in box))


def as_mass(source) -> PointMass:
    if isinstance(source, PointMass):
        return source
    if isinstance(source, OnlineSample) or isinstance(source, (list, tuple)):
        return trajectory_mass(source)
    return field_mass(source)


# ---------------------------------------------------------------------------
# mapping objects


class PiecewiseLinear:
    """Monotone piecewise-linear 1-D function, extrapolated with the end slopes."""

    def __init__(self, knots, values):
        self.knots = np.asarray(knots, dtype=np.float64)
        self.values = np.asarray(values, dtype=np.float64)
        if len(self.knots) < 2 or np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if np.any(np.diff(self.values) < 0):
            raise ValueError("values must be non-decreasing")

    @classmethod
    def constant(cls, at: float, value: float):
        return cls([at - 1.0, at + 1.0], [value, value])

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        k, v = self.knots, self.values
        out = np.interp(t, k, v)
        lo_slope = (v[1] - v[0]) / (k[1] - k[0])
        hi_slope = (v[-1] - v[-2]) / (k[-1] - k[-2])
        out = np.where(t < k[0], v[0] + (t - k[0]) * lo_slope, out)
        out = np.where(t > k[-1], v[-1] + (t - k[-1]) * hi_slope, out)
        return out


def band_weights(t, centers, sigma):
    """Normalized Gaussian memberships of ``t`` in each band, shape (len(t), B)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if len(centers) == 1:
        return np.ones((len(t), 1))
    logit = -((t[:, None] - np.asarray(centers)[None, :]) ** 2) / (2.0 * sigma**2)
    logit -= logit.max(axis=1, keepdims=True)
    e = np.exp(logit)
    return e / e.sum(axis=1, keepdims=True)


class CoordinateMap:
    """x'(x, y) = sum_b wx_b(y) fx_b(x), and symmetrically for y'.

    A separable map is the one-band case. ``raw`` leaves values unclipped;
    calling the map clips into ``[0, n)``.
    """

    def __init__(self, n, x_funcs, y_funcs, x_bands=None, y_bands=None):
        self.n = int(n)
        self.x_funcs = list(x_funcs)
        self.y_funcs = list(y_funcs)
        # bands: (centers, sigma) along the *other* axis
        self.x_bands = x_bands or ([0.0], 1.0)
        self.y_bands = y_bands or ([0.0], 1.0)
        if len(self.x_bands[0]) != len(self.x_funcs) or len(self.y_bands[0]) != len(self.y_funcs):
            raise ValueError("band count does not match the number of 1-D maps")

    @property
    def separable(self) -> bool:
        return len(self.x_funcs) == 1 and len(self.y_funcs) == 1

    def raw(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        shape = np.broadcast(x, y).shape
        x, y = np.broadcast_to(x, shape).ravel(), np.broadcast_to(y, shape).ravel()
        wx = band_weights(y, *self.x_bands)
        wy = band_weights(x, *self.y_bands)
        xs = sum(wx[:, b] * f(x) for b, f in enumerate(self.x_funcs))
        ys = sum(wy[:, b] * f(y) for b, f in enumerate(self.y_funcs))
        return np.reshape(xs, shape), np.reshape(ys, shape)

    def __call__(self, x, y):
        xs, ys = self.raw(x, y)
        top = np.nextafter(float(self.n), 0.0)
        return np.clip(xs, 0.0, top), np.clip(ys, 0.0, top)

    def clip_fraction(self, mass) -> float:
        """Fraction of ``mass`` whose unclipped image falls outside [0, n]."""
        mass = as_mass(mass)
        xs, ys = self.raw(mass.x, mass.y)
        out = (xs < 0) | (xs > self.n) | (ys < 0) | (ys > self.n)
        return float(mass.w[out].sum() / mass.w.sum())


# ---------------------------------------------------------------------------
# fits


def _aspect_extents(width: float, height: float, n: int, aspect) -> tuple:
    """Output extents (Lx, Ly): the longer axis fills n, the shorter gets r'*n."""
    aspect = AspectMode(aspect)
    longer = max(width, height)
    if longer <= 0:
        raise DegenerateError("zero extent on both axes")
    r = min(width, height) / longer
    if aspect is AspectMode.FILL:
        r2 = 1.0 if r > 0 else 0.0
    elif aspect is AspectMode.PRESERVE:
        r2 = r
    else:
        r2 = math.sqrt(math.sin(math.pi * r / 2.0))
    if width >= height:
        return float(n), r2 * n
    return r2 * n, float(n)


def _axis_linear(lo: float, hi: float, extent: float, n: int) -> PiecewiseLinear:
    start = n / 2.0 - extent / 2.0
    if hi <= lo or extent == 0:
        return PiecewiseLinear.constant((lo + hi) / 2.0, n / 2.0)
    return PiecewiseLinear([lo, hi], [start, start + extent])


def fit_linear(box, n: int = 32, aspect=AspectMode.ADAPTIVE) -> CoordinateMap:
    """Affine map of ``box = (x0, x1, y0, y1)`` onto the target square."""
    x0, x1, y0, y1 = (float(v) for v in box)
    w, h = x1 - x0, y1 - y0
    if w <= 0 or h <= 0:
        raise DegenerateError(f"box {box} has zero extent")
    lx, ly = _aspect_extents(w, h, n, aspect)
    return CoordinateMap(n, [_axis_linear(x0, x1, lx, n)], [_axis_linear(y0, y1, ly, n)])


def one_sided_moments(coord, w):
    """Centroid and the one-sided second moments below / at-or-above it.

    Each side is normalized by its own mass.
    """
    coord = np.asarray(coord, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise DegenerateError("zero mass")
    c = float((w * coord).sum() / total)
    below = coord < c
    d = (coord - c) ** 2
    mb, ma = w[below].sum(), w[~below].sum()
    dm = float((w[below] * d[below]).sum() / mb) if mb > 0 else 0.0
    dp = float((w[~below] * d[~below]).sum() / ma) if ma > 0 else 0.0
    return c, dm, dp


def bimoment_bounds(coord, w, k: float = 2.0):
    """Axis bounds ``[c - k*sqrt(d-), c + k*sqrt(d+)]``; a zero side mirrors the other."""
    c, dm, dp = one_sided_moments(coord, w)
    if dm == 0.0:
        dm = dp
    if dp == 0.0:
        dp = dm
    return c - k * math.sqrt(dm), c, c + k * math.sqrt(dp)


def _axis_bimoment(bounds, extent: float, n: int) -> PiecewiseLinear:
    lo, c, hi = bounds
    if hi <= lo or extent == 0:
        return PiecewiseLinear.constant(c, n / 2.0)
    half = extent / 2.0
    mid = n / 2.0
    return PiecewiseLinear([lo, c, hi], [mid - half, mid, mid + half])


def fit_bimoment(source, n: int = 32, k: float = 2.0, aspect=AspectMode.ADAPTIVE) -> CoordinateMap:
    """Bi-moment normalization of an intensity field or trajectory."""
    mass = as_mass(source)
    bx = bimoment_bounds(mass.x, mass.w, k)
    by = bimoment_bounds(mass.y, mass.w, k)
    lx, ly = _aspect_extents(bx[2] - bx[0], by[2] - by[0], n, aspect)
    return CoordinateMap(n, [_axis_bimoment(bx, lx, n)], [_axis_bimoment(by, ly, n)])


def band_layout(lo: float, hi: float, bands: int):
    """Centers at (b+1)/(B+1) of [lo, hi] with sigma = extent/(B+1)."""
    extent = hi - lo
    if bands == 1:
        return [0.5 * (lo + hi)], 1.0
    centers = [lo + (b + 1) * extent / (bands + 1) for b in range(bands)]
    return centers, max(extent / (bands + 1), 1e-12)


def fit_p2dbmn(source, n: int = 32, bands: int = 3, k: float = 2.0,
               aspect=AspectMode.ADAPTIVE) -> CoordinateMap:
    """Pseudo-2-D bi-moment normalization.

    The x-map is a membership-weighted blend of 1-D bi-moment maps fitted
    on horizontal bands (Gaussian memberships along y), and vice versa.
    With one band it is exactly :func:`fit_bimoment`.
    """
    mass = as_mass(source)
    gx = bimoment_bounds(mass.x, mass.w, k)
    gy = bimoment_bounds(mass.y, mass.w, k)
    lx, ly = _aspect_extents(gx[2] - gx[0], gy[2] - gy[0], n, aspect)

    def blend(coord, other, other_bounds, extent, global_bounds):
        centers, sigma = band_layout(other_bounds[0], other_bounds[2], bands)
        if bands == 1:
            memb = np.ones((len(other), 1))
        else:
            # unnormalized Gaussian membership of the mass in each band
            memb = np.exp(-((other[:, None] - np.asarray(centers)[None, :]) ** 2) / (2 * sigma**2))
        funcs = []
        for b in range(bands):
            wb = mass.w * memb[:, b]
            if wb.sum() <= 1e-12 * mass.total:
                funcs.append(_axis_bimoment(global_bounds, extent, n))
            else:
                funcs.append(_axis_bimoment(bimoment_bounds(coord, wb, k), extent, n))
        return funcs, (centers, sigma)

    xf, xb = blend(mass.x, mass.y, gy, lx, gx)
    yf, yb = blend(mass.y, mass.x, gx, ly, gy)
    return CoordinateMap(n, xf, yf, xb, yb)


def _runs(mask_line):
    """(start, stop, value) runs of a boolean line."""
    padded = np.concatenate([[not mask_line[0]], mask_line, [not mask_line[-1]]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(edges[i], edges[i + 1], bool(mask_line[edges[i]])) for i in range(len(edges) - 1)]


# total density given to every foreground-bearing scanline, spread uniformly
# over the character box; keeps gap-free glyphs close to linear
LINE_BASELINE = 0.5


def _line_density_rows(fg: np.ndarray, span) -> np.ndarray:
    out = np.zeros(fg.shape)
    lo, hi = span
    for i, line in enumerate(fg):
        if not line.any():
            continue
        runs = _runs(line)
        for idx, (a, b, is_fg) in enumerate(runs):
            if not is_fg and 0 < idx < len(runs) - 1:
                out[i, a:b] = 1.0 / (b - a)
        out[i, lo:hi] += LINE_BASELINE / (hi - lo)
    return out


def line_density(field: np.ndarray):
    """Horizontal and vertical local line-density fields of a foreground mask.

    A background gap enclosed by strokes along the scanline gets density
    1/(gap length) per pixel, so every gap carries total density 1 and
    line spacing is equalized. Stroke pixels and border background get
    nothing beyond a uniform baseline over the character box on scanlines
    that carry foreground; foreground-free scanlines stay zero.
    """
    fg = np.asarray(field) > 0
    rows, cols = np.nonzero(fg)
    if len(rows) == 0:
        return np.zeros(fg.shape), np.zeros(fg.shape)
    dx = _line_density_rows(fg, (cols.min(), cols.max() + 1))
    dy = _line_density_rows(fg.T, (rows.min(), rows.max() + 1)).T
    return dx, dy


_PROFILE_FLOOR = 1e-6


def _cumulative_map(profile, start: float, extent: float, n: int) -> PiecewiseLinear:
    p = np.maximum(profile, _PROFILE_FLOOR)
    cum = np.concatenate([[0.0], np.cumsum(p)]) / p.sum()
    knots = start + np.arange(len(p) + 1, dtype=np.float64)
    lo = n / 2.0 - extent / 2.0
    return PiecewiseLinear(knots, lo + extent * cum)


def fit_ldpi_density(dens_x, dens_y, n: int = 32, box=None, slices: int = 3,
                     aspect=AspectMode.ADAPTIVE) -> CoordinateMap:
    """Line-density projection interpolation from precomputed density fields.

    ``dens_x`` drives the x mapping (densities measured along rows),
    ``dens_y`` the y mapping. ``box`` is in pixel units; by default the
    bounding box of nonzero density.
    """
    dens_x = np.asarray(dens_x, dtype=np.float64)
    dens_y = np.asarray(dens_y, dtype=np.float64)
    if box is None:
        rows, cols = np.nonzero((dens_x > 0) | (dens_y > 0))
        if len(rows) == 0:
            raise DegenerateError("density field has zero mass")
        box = (cols.min(), cols.max() + 1, rows.min(), rows.max() + 1)
    x0, x1, y0, y1 = (int(v) for v in box)
    if x1 <= x0 or y1 <= y0:
        raise DegenerateError("empty box")
    lx, ly = _aspect_extents(x1 - x0, y1 - y0, n, aspect)
    sub_x = dens_x[y0:y1, x0:x1]
    sub_y = dens_y[y0:y1, x0:x1]
    row_c = y0 + np.arange(y1 - y0) + 0.5
    col_c = x0 + np.arange(x1 - x0) + 0.5

    def slice_maps(dens, along_centers, lo, hi, extent, start, axis):
        centers, sigma = band_layout(lo, hi, slices)
        if slices == 1:
            memb = np.ones((len(along_centers), 1))
        else:
            memb = np.exp(-((along_centers[:, None] - np.asarray(centers)[None, :]) ** 2)
                          / (2 * sigma**2))
        funcs = []
        for b in range(slices):
            if axis == 0:
                prof = (memb[:, b][:, None] * dens).sum(axis=0)
            else:
                prof = (dens * memb[:, b][None, :]).sum(axis=1)
            funcs.append(_cumulative_map(prof, start, extent, n))
        return funcs, (centers, sigma)

    xf, xb = slice_maps(sub_x, row_c, y0, y1, lx, x0, axis=0)
    yf, yb = slice_maps(sub_y, col_c, x0, x1, ly, y0, axis=1)
    return CoordinateMap(n, xf, yf, xb, yb)


def fit_ldpi(field, n: int = 32, slices: int = 3, aspect=AspectMode.ADAPTIVE,
             margin: int = 0) -> CoordinateMap:
    """LDPI normalization of an offline intensity field.

    ``margin`` grows the character box by that many pixels per side, e.g. 1
    so that the Sobel ring around the strokes also lands inside the map.
    """
    field = np.asarray(field, dtype=np.float64)
    mass = field_mass(field)
    dx, dy = line_density(field)
    if margin:
        dx, dy = np.pad(dx, margin), np.pad(dy, margin)
        x0, x1, y0, y1 = mass.box
        box = (x0, x1 + 2 * margin, y0, y1 + 2 * margin)
        cmap = fit_ldpi_density(dx, dy, n, box=box, slices=slices, aspect=aspect)
        return shifted(cmap, -margin, -margin)
    return fit_ldpi_density(dx, dy, n, box=mass.box, slices=slices, aspect=aspect)


def shifted(cmap: CoordinateMap, dx: float, dy: float) -> CoordinateMap:
    """The same map expressed in input coordinates translated by (dx, dy)."""
    xf = [PiecewiseLinear(f.knots + dx, f.values) for f in cmap.x_funcs]
    yf = [PiecewiseLinear(f.knots + dy, f.values) for f in cmap.y_funcs]
    xb = ([c + dy for c in cmap.x_bands[0]], cmap.x_bands[1])
    yb = ([c + dx for c in cmap.y_bands[0]], cmap.y_bands[1])
    return CoordinateMap(cmap.n, xf, yf, xb, yb)


def padded_box(box, margin: float):
    x0, x1, y0, y1 = box
    return (x0 - margin, x1 + margin, y0 - margin, y1 + margin)


NORMALIZERS = ("linear", "bimoment", "p2dbmn", "ldpi")


def fit_map(kind: str, source, n: int = 32, aspect=AspectMode.ADAPTIVE,
            margin: int = 0) -> CoordinateMap:
    """Dispatch by name. LDPI needs an image, not a trajectory.

    ``margin`` only affects the box-based fits (linear, LDPI).
    """
    if kind == "linear":
        return fit_linear(padded_box(as_mass(source).box, margin), n, aspect)
    if kind == "bimoment":
        return fit_bimoment(source, n, aspect=aspect)
    if kind == "p2dbmn":
        return fit_p2dbmn(source, n, aspect=aspect)
    if kind == "ldpi":
        if isinstance(source, (OnlineSample, list, tuple, PointMass)):
            raise ValueError("LDPI is not applicable to online trajectories")
        return fit_ldpi(source, n, aspect=aspect, margin=margin)
    raise ValueError(f"unknown normalization {kind!r}")
