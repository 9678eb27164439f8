"""Dataset generation, loading and directMap caching."""
from __future__ import annotations

import glob
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..directmap import (DirectMap, extract_offline, extract_online, parse_dmap, resample,
                         serialize_dmap)
from ..sampleio import (ClassGrammar, DatasetManifest, FormatError, ManifestEntry, OfflineSample,
                        random_style, read_gnt_record, read_pot_record, serialize_gnt,
                        serialize_pot, synth_generate)
from ..sampleio.formats import iter_gnt, iter_pot
from ..shapenorm import DegenerateError, fit_map, gray_normalize, trajectory_mass
from .config import DataConfig, DataError, ExperimentConfig, FeatureConfig

TEST_WRITER_BASE = 200
OFFLINE_MARGIN = 1


def test_writer_style(writer_id: int, shifted: bool = True):
    """Style of a held-out writer; shifted writers slant harder and vary more in size."""
    if not shifted:
        return random_style(writer_id)
    sign = 1.0 if writer_id % 2 == 0 else -1.0
    lo, hi = sorted((0.15 * sign, 0.3 * sign))
    return random_style(500 + writer_id, slant=(lo, hi), scale=(0.75, 1.25), jitter=(2.0, 3.5))


def _writer_plan(cfg: DataConfig):
    for w in range(cfg.train_writers):
        yield "train", w, random_style(w), cfg.train_instances
    for k in range(cfg.test_writers):
        w = TEST_WRITER_BASE + k
        yield "test", w, test_writer_style(w, cfg.test_style == "shifted"), cfg.test_instances


def generate_synthetic(cfg: DataConfig, out_dir) -> dict:
    """Write one GNT and one POT file per writer plus a manifest for each modality.

    Returns ``{"offline": manifest_path, "online": manifest_path}``.
    """
    out = Path(out_dir)
    (out / "gnt").mkdir(parents=True, exist_ok=True)
    (out / "pot").mkdir(parents=True, exist_ok=True)
    grammar = ClassGrammar.builtin(cfg.num_classes, cfg.grammar_seed)
    entries = {"offline": [], "online": []}
    for split, w, style, per in _writer_plan(cfg):
        online, offline = [], []
        for c in range(grammar.num_classes):
            for k in range(per):
                on, off = synth_generate(grammar, style, c, k, w)
                online.append(on)
                offline.append(off)
        for modality, samples, ext, ser, it in (("offline", offline, "gnt", serialize_gnt, iter_gnt),
                                                 ("online", online, "pot", serialize_pot, iter_pot)):
            path = out / ext / f"{w:04d}.{ext}"
            data = ser(samples)
            path.write_bytes(data)
            for offset, s in it(data, w):
                entries[modality].append(ManifestEntry(str(path), offset, s.code, w, split))
    paths = {}
    for modality, ents in entries.items():
        codes = grammar.codes if modality == "offline" else [grammar.pot_code(c) for c in
                                                              range(grammar.num_classes)]
        manifest = DatasetManifest.build(ents, codes)
        paths[modality] = out / f"manifest_{modality}.tsv"
        manifest.save(paths[modality])
    return paths


_WRITER_RE = re.compile(r"(\d+)")


def manifest_from_files(cfg: DataConfig, modality: str) -> DatasetManifest:
    """Index GNT / POT files matched by the configured globs; writer = leading digits."""
    it = iter_gnt if modality == "offline" else iter_pot
    entries = []
    for split, pattern in (("train", cfg.train_glob), ("test", cfg.test_glob)):
        if not pattern:
            continue
        files = sorted(glob.glob(pattern))
        if not files:
            raise DataError(f"no files match {pattern!r}")
        for name in files:
            m = _WRITER_RE.search(Path(name).name)
            writer = int(m.group(1)) if m else 0
            try:
                for offset, s in it(Path(name).read_bytes(), writer):
                    entries.append(ManifestEntry(name, offset, s.code, writer, split))
            except FormatError as err:
                raise DataError(f"{name}: {err}") from None
    return DatasetManifest.build(entries)


def read_sample(entry: ManifestEntry, modality: str, cache: dict | None = None):
    data = None if cache is None else cache.get(entry.path)
    if data is None:
        try:
            data = Path(entry.path).read_bytes()
        except OSError as err:
            raise DataError(f"cannot read {entry.path}: {err}") from None
        if cache is not None:
            cache.clear()
            cache[entry.path] = data
    reader = read_gnt_record if modality == "offline" else read_pot_record
    try:
        return reader(data, entry.offset, entry.writer_id)
    except FormatError as err:
        raise DataError(f"{entry.path}: {err}") from None


# ---------------------------------------------------------------------------
# feature extraction


def extract_features(sample, feat: FeatureConfig, label: int = -1) -> DirectMap:
    """Sample -> (d, n, n) map according to the feature configuration.

    Offline ``image`` input stores the normalized gray image as a single plane.
    """
    n = feat.size
    if isinstance(sample, OfflineSample):
        field = gray_normalize(sample, feat.gray_mode)
        if not (field > 0).any():
            raise DegenerateError("blank image")
        cmap = fit_map(feat.normalization, field, n, feat.aspect, margin=OFFLINE_MARGIN)
        if feat.input == "image":
            img = resample(field, cmap).astype(np.float32)[None]
            return DirectMap(np.maximum(img, 0), label, sample.code, sample.writer_id, "offline")
        dm = extract_offline(field, cmap, feat.mode, label=label, code=sample.code,
                             writer_id=sample.writer_id)
    else:
        cmap = fit_map(feat.normalization, trajectory_mass(sample.strokes), n, feat.aspect)
        dm = extract_online(sample, cmap)
        dm.label = label
    return dm


def _extract_chunk(args):
    entries, modality, feat, labels = args
    cache = {}
    return [serialize_dmap(extract_features(read_sample(e, modality, cache), feat, lab))
            for e, lab in zip(entries, labels)]


@dataclass
class FeatureSet:
    maps: np.ndarray  # (N, d, n, n) float32
    labels: np.ndarray
    writers: np.ndarray

    def __len__(self):
        return len(self.labels)

    def writer(self, w: int) -> "FeatureSet":
        m = self.writers == w
        return FeatureSet(self.maps[m], self.labels[m], self.writers[m])


def extract_split(manifest: DatasetManifest, split: str, modality: str, feat: FeatureConfig,
                  jobs: int = 1, chunk: int = 200) -> list[bytes]:
    """DMAP bytes of every entry of ``split`` in manifest order."""
    entries = manifest.split(split)
    labels = [manifest.label_of(e.code) for e in entries]
    tasks = [(entries[i:i + chunk], modality, feat, labels[i:i + chunk])
             for i in range(0, len(entries), chunk)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(jobs) as pool:
            parts = list(pool.map(_extract_chunk, tasks))
    else:
        parts = [_extract_chunk(t) for t in tasks]
    return [b for part in parts for b in part]


def write_cache(blobs: list, cache_dir, split: str) -> Path:
    """One DMAP file per sample under ``cache_dir/split``; returns the directory."""
    d = Path(cache_dir) / split
    d.mkdir(parents=True, exist_ok=True)
    for old in d.glob("*.dmap"):
        old.unlink()
    for i, blob in enumerate(blobs):
        (d / f"{i:07d}.dmap").write_bytes(blob)
    return d


def load_cache(cache_dir, split: str) -> FeatureSet:
    d = Path(cache_dir) / split
    files = sorted(d.glob("*.dmap"))
    if not files:
        raise DataError(f"no cached features in {d}; run extract first")
    maps, labels, writers = [], [], []
    for f in files:
        try:
            dm = parse_dmap(f.read_bytes())
        except ValueError as err:
            raise DataError(f"{f}: {err}") from None
        maps.append(dm.values)
        labels.append(dm.label)
        writers.append(dm.writer_id)
    return FeatureSet(np.stack(maps), np.asarray(labels, dtype=np.int64),
                      np.asarray(writers, dtype=np.int64))


def features_in_memory(cfg: ExperimentConfig, manifest: DatasetManifest, split: str) -> FeatureSet:
    blobs = extract_split(manifest, split, cfg.features.modality, cfg.features, cfg.jobs)
    dms = [parse_dmap(b) for b in blobs]
    if not dms:
        raise DataError(f"split {split!r} is empty")
    return FeatureSet(np.stack([d.values for d in dms]),
                      np.asarray([d.label for d in dms], dtype=np.int64),
                      np.asarray([d.writer_id for d in dms], dtype=np.int64))
