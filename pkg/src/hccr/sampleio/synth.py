"""Deterministic synthetic writers.

Each class is a handful of polyline strokes on a 100-unit design grid
(shifted to [100, 200] so tablet coordinates stay clear of the POT
sentinels). A writer style shears, scales and jitters the template; the
offline twin is an anti-aliased rendering of exactly the same points.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .formats import OfflineSample, OnlineSample

_ORIGIN = 100
_CENTER = 150.0
# Offline rendering resolution: image pixels per tablet unit.
PX_PER_UNIT = 0.5

# (character, strokes) on a 0..100 grid, y pointing down.
_BUILTIN = [
    ("二", [[(20, 35), (80, 35)], [(10, 70), (90, 70)]]),
    ("三", [[(25, 20), (75, 20)], [(30, 50), (70, 50)], [(10, 82), (90, 82)]]),
    ("十", [[(10, 45), (90, 45)], [(50, 5), (50, 95)]]),
    ("口", [[(15, 15), (15, 85)], [(15, 15), (85, 15), (85, 85)], [(15, 85), (85, 85)]]),
    ("人", [[(50, 5), (45, 45), (10, 95)], [(48, 40), (90, 95)]]),
    ("大", [[(10, 35), (90, 35)], [(50, 5), (45, 50), (10, 95)], [(50, 45), (90, 95)]]),
    ("天", [[(20, 15), (80, 15)], [(10, 45), (90, 45)], [(50, 15), (45, 55), (10, 95)],
           [(50, 50), (90, 95)]]),
    ("工", [[(20, 15), (80, 15)], [(50, 15), (50, 85)], [(10, 85), (90, 85)]]),
    ("土", [[(20, 45), (80, 45)], [(50, 10), (50, 85)], [(10, 85), (90, 85)]]),
    ("王", [[(15, 15), (85, 15)], [(20, 50), (80, 50)], [(50, 15), (50, 85)], [(10, 85), (90, 85)]]),
    ("木", [[(10, 35), (90, 35)], [(50, 5), (50, 95)], [(48, 38), (10, 85)], [(52, 38), (90, 85)]]),
    ("日", [[(25, 10), (25, 90)], [(25, 10), (75, 10), (75, 90)], [(25, 50), (75, 50)],
           [(25, 90), (75, 90)]]),
    ("目", [[(25, 5), (25, 95)], [(25, 5), (75, 5), (75, 95)], [(25, 35), (75, 35)],
           [(25, 65), (75, 65)], [(25, 95), (75, 95)]]),
    ("中", [[(15, 25), (15, 70)], [(15, 25), (85, 25), (85, 70)], [(15, 70), (85, 70)],
           [(50, 5), (50, 95)]]),
    ("上", [[(45, 10), (45, 85)], [(45, 45), (80, 45)], [(10, 85), (90, 85)]]),
    ("下", [[(10, 15), (90, 15)], [(45, 15), (45, 95)], [(50, 45), (75, 60)]]),
    ("山", [[(50, 10), (50, 85)], [(15, 35), (15, 85), (85, 85)], [(85, 35), (85, 85)]]),
    ("川", [[(20, 10), (20, 60), (10, 90)], [(50, 15), (50, 80)], [(80, 10), (80, 90)]]),
    ("小", [[(50, 5), (50, 90), (40, 80)], [(25, 35), (10, 70)], [(75, 35), (90, 70)]]),
    ("又", [[(15, 15), (80, 15), (50, 60), (10, 95)], [(30, 40), (90, 95)]]),
]


@dataclass(frozen=True)
class WriterStyle:
    seed: int = 0
    slant: float = 0.0  # radians, shear x += y*tan(slant)
    scale_x: float = 1.0
    scale_y: float = 1.0
    jitter_sigma: float = 0.0  # tablet units
    thickness: float = 3.0  # pixels, offline only
    contrast: float = 1.0  # darkest ink = 255 * (1 - contrast)

    def __post_init__(self):
        if self.scale_x <= 0 or self.scale_y <= 0:
            raise ValueError("scale factors must be positive")
        if self.jitter_sigma < 0:
            raise ValueError("jitter_sigma must be non-negative")
        if not 0.0 <= self.contrast <= 1.0:
            raise ValueError("contrast must lie in [0, 1]")
        if not abs(self.slant) < math.pi / 2:
            raise ValueError("slant must lie in (-pi/2, pi/2)")


@dataclass(frozen=True)
class ClassGrammar:
    templates: tuple  # per class: tuple of (k, 2) int arrays
    codes: tuple  # per class: 2-byte GB code
    seed: int = 0

    @classmethod
    def builtin(cls, num_classes: int = 20, seed: int = 0):
        if not 1 <= num_classes <= len(_BUILTIN):
            raise ValueError(f"the built-in grammar has {len(_BUILTIN)} classes")
        chosen = _BUILTIN[:num_classes]
        templates = tuple(
            tuple(np.asarray(s, dtype=np.int64) + _ORIGIN for s in strokes) for _, strokes in chosen
        )
        codes = tuple(ch.encode("gb2312") for ch, _ in chosen)
        return cls(templates, codes, seed)

    @property
    def num_classes(self) -> int:
        return len(self.templates)

    def pot_code(self, class_index: int) -> bytes:
        return self.codes[class_index] + b"\x00\x00"


def distort(points: np.ndarray, style: WriterStyle) -> np.ndarray:
    """Shear then scale about the design center; no jitter."""
    pts = np.asarray(points, dtype=np.float64)
    x = pts[:, 0] + pts[:, 1] * math.tan(style.slant)
    y = pts[:, 1]
    x = _CENTER + style.scale_x * (x - _CENTER)
    y = _CENTER + style.scale_y * (y - _CENTER)
    return np.stack([x, y], axis=1)


def synth_generate(grammar: ClassGrammar, style: WriterStyle, class_index: int,
                   instance: int = 0, writer_id: int = 0):
    """Render one (online, offline) twin of ``class_index`` in ``style``.

    ``instance`` selects an independent jitter draw so a writer can produce
    several samples of the same class.
    """
    if not 0 <= class_index < grammar.num_classes:
        raise IndexError(f"unknown class index {class_index}")
    rng = np.random.default_rng([grammar.seed, style.seed & (2**64 - 1), class_index, instance])
    strokes = []
    for tmpl in grammar.templates[class_index]:
        pts = distort(tmpl, style)
        if style.jitter_sigma > 0:
            pts = pts + rng.normal(0.0, style.jitter_sigma, size=2)
            pts = pts + rng.normal(0.0, style.jitter_sigma, size=pts.shape)
        pts = np.rint(pts).astype(np.int64)
        # keep clear of the (-1, 0) / (-1, -1) terminators
        bad = (pts[:, 0] == -1) & ((pts[:, 1] == 0) | (pts[:, 1] == -1))
        pts[bad, 0] = -2
        strokes.append(pts)
    online = OnlineSample(strokes, code=grammar.pot_code(class_index), label=class_index,
                          writer_id=writer_id)
    gray = render(strokes, style.thickness, style.contrast)
    offline = OfflineSample(gray.shape[1], gray.shape[0], gray, code=grammar.codes[class_index],
                            label=class_index, writer_id=writer_id)
    return online, offline


def _segment_distance(px, py, a, b):
    d = b - a
    den = float(d @ d)
    if den == 0.0:
        return np.hypot(px - a[0], py - a[1])
    t = np.clip(((px - a[0]) * d[0] + (py - a[1]) * d[1]) / den, 0.0, 1.0)
    return np.hypot(px - (a[0] + t * d[0]), py - (a[1] + t * d[1]))


def render(strokes, thickness: float, contrast: float, px_per_unit: float = PX_PER_UNIT):
    """Anti-aliased rendering of polylines; returns uint8 gray, background 255."""
    pts = [np.asarray(s, dtype=np.float64) * px_per_unit for s in strokes]
    allpts = np.concatenate(pts)
    margin = thickness / 2 + 2
    lo = np.floor(allpts.min(axis=0) - margin)
    hi = np.ceil(allpts.max(axis=0) + margin)
    width, height = int(hi[0] - lo[0]), int(hi[1] - lo[1])
    py, px = np.mgrid[0:height, 0:width].astype(np.float64) + 0.5
    px += lo[0]
    py += lo[1]
    dist = np.full((height, width), np.inf)
    for s in pts:
        if len(s) == 1:
            dist = np.minimum(dist, np.hypot(px - s[0, 0], py - s[0, 1]))
        for a, b in zip(s[:-1], s[1:]):
            dist = np.minimum(dist, _segment_distance(px, py, a, b))
    coverage = np.clip(thickness / 2 + 0.5 - dist, 0.0, 1.0)
    return np.rint(255.0 - 255.0 * contrast * coverage).astype(np.uint8)


def random_style(seed: int, slant=(-0.15, 0.15), scale=(0.85, 1.15), jitter=(1.0, 3.0),
                 thickness=(2.0, 4.0), contrast=(0.6, 1.0)) -> WriterStyle:
    """Draw a writer style uniformly from the given ranges."""
    rng = np.random.default_rng(seed)
    return WriterStyle(
        seed=seed,
        slant=float(rng.uniform(*slant)),
        scale_x=float(rng.uniform(*scale)),
        scale_y=float(rng.uniform(*scale)),
        jitter_sigma=float(rng.uniform(*jitter)),
        thickness=float(rng.uniform(*thickness)),
        contrast=float(rng.uniform(*contrast)),
    )
