"""Evaluation metrics and their JSON-lines report format.

A report is a sequence of JSON objects, one per line, each tagged by
``kind``: ``summary``, ``topn``, ``writer``, ``confusion`` and ``timing``.
Timing lines carry wall-clock measurements and are the only lines that may
differ between reruns with the same seed.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..convnet import top_n


def top_n_accuracies(probs, labels, max_n: int = 10) -> list:
    """Accuracy for N = 1 .. max_n; non-decreasing by construction."""
    probs = np.atleast_2d(probs)
    labels = np.asarray(labels)
    if len(labels) == 0:
        return [float("nan")] * max_n
    ranked = top_n(probs, min(max_n, probs.shape[1]))
    hits = ranked == labels[:, None]
    first = np.where(hits.any(axis=1), hits.argmax(axis=1), max_n)
    return [float((first < n).mean()) for n in range(1, max_n + 1)]


def confused_pairs(pred, labels, limit: int = 10) -> list:
    """Most frequent (true, predicted) error pairs, ties ordered by the pair itself."""
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    bad = pred != labels
    pairs, counts = np.unique(np.stack([labels[bad], pred[bad]], axis=1), axis=0,
                              return_counts=True) if bad.any() else (np.zeros((0, 2), int), [])
    order = sorted(range(len(counts)), key=lambda i: (-counts[i], tuple(pairs[i])))
    return [{"true": int(pairs[i][0]), "pred": int(pairs[i][1]), "count": int(counts[i])}
            for i in order[:limit]]


@dataclass
class WriterResult:
    writer: int
    samples: int
    acc_before: float
    acc_after: float | None = None
    err_reduction: float | None = None


@dataclass
class MetricsReport:
    name: str = ""
    samples: int = 0
    topn: list = field(default_factory=list)
    writers: list = field(default_factory=list)  # WriterResult
    confusion: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def records(self, with_timing: bool = True) -> list:
        out = [{"kind": "summary", "name": self.name, "samples": self.samples,
                "extra": self.extra}]
        out += [{"kind": "topn", "n": i + 1, "accuracy": a} for i, a in enumerate(self.topn)]
        out += [{"kind": "writer", **asdict(w)} for w in self.writers]
        out += [{"kind": "confusion", **c} for c in self.confusion]
        if with_timing and self.timing:
            out.append({"kind": "timing", **self.timing})
        return out

    def dumps(self, with_timing: bool = True) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records(with_timing))

    @classmethod
    def loads(cls, text: str) -> "MetricsReport":
        rep = cls()
        topn = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                kind = rec.pop("kind")
            except (ValueError, KeyError) as err:
                raise ValueError(f"report line {lineno}: {err}") from None
            if kind == "summary":
                rep.name, rep.samples, rep.extra = rec["name"], rec["samples"], rec["extra"]
            elif kind == "topn":
                topn[rec["n"]] = rec["accuracy"]
            elif kind == "writer":
                rep.writers.append(WriterResult(**rec))
            elif kind == "confusion":
                rep.confusion.append(rec)
            elif kind == "timing":
                rep.timing = rec
            else:
                raise ValueError(f"report line {lineno}: unknown kind {kind!r}")
        rep.topn = [topn[n] for n in sorted(topn)]
        return rep

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path) -> "MetricsReport":
        return cls.loads(Path(path).read_text())

    def mean_err_reduction(self):
        vals = [w.err_reduction for w in self.writers if w.err_reduction is not None]
        return float(np.mean(vals)) if vals else None
