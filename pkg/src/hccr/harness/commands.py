"""Pipeline commands. Each is a function of (config, files on disk) to files on disk.

Output layout under ``config.output_dir``::

    data/            synthetic GNT / POT files and manifests
    cache/<split>/   one DMAP file per sample
    models/          model_<i>.hcnn and epochs_<i>.jsonl
    reports/         *.jsonl metric reports
    transforms/      writer_<id>.stma
"""
from __future__ import annotations

import json
import logging
import statistics
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import adaptation as stm
from ..convnet import (TrainingDiverged, ensemble_proba, fit, full_architecture, init,
                       load_checkpoint, predict_proba, save_checkpoint)
from ..directmap import sparsity
from ..sampleio import DatasetManifest
from .config import DataError, ExperimentConfig
from .data import (FeatureSet, extract_features, extract_split, generate_synthetic,
                   load_cache, manifest_from_files, read_sample, write_cache)
from .metrics import MetricsReport, WriterResult, confused_pairs, top_n_accuracies

log = logging.getLogger(__name__)


def _out(cfg: ExperimentConfig, *parts) -> Path:
    p = Path(cfg.output_dir).joinpath(*parts)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


def _dtype(cfg: ExperimentConfig):
    return np.float64 if cfg.precision == 64 else np.float32


def cmd_gen_synth(cfg: ExperimentConfig) -> dict:
    if cfg.data.source != "synthetic":
        raise DataError("gen-synth needs data.source = synthetic")
    return generate_synthetic(cfg.data, cfg.data_path)


def load_manifest(cfg: ExperimentConfig) -> DatasetManifest:
    modality = cfg.features.modality
    if cfg.data.source == "casia":
        return manifest_from_files(cfg.data, modality)
    path = cfg.data_path / f"manifest_{modality}.tsv"
    if not path.is_file():
        cmd_gen_synth(cfg)
    try:
        return DatasetManifest.load(path)
    except ValueError as err:
        raise DataError(f"{path}: {err}") from None


def cmd_extract(cfg: ExperimentConfig) -> dict:
    """Extract every split into the DMAP cache; returns per-split counts and mean sparsity."""
    manifest = load_manifest(cfg)
    summary = {}
    for split in ("train", "test"):
        if not manifest.split(split):
            continue
        blobs = extract_split(manifest, split, cfg.features.modality, cfg.features, cfg.jobs)
        write_cache(blobs, _out(cfg, "cache", "x").parent, split)
        fs = load_cache(Path(cfg.output_dir) / "cache", split)
        summary[split] = {"samples": len(fs),
                          "mean_sparsity": float(np.mean([sparsity(m) for m in fs.maps]))}
    if "train" not in summary:
        raise DataError("the manifest has no training samples")
    summary["num_classes"] = manifest.num_classes
    _out(cfg, "cache", "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
    return summary


def _load_split(cfg: ExperimentConfig, split: str) -> FeatureSet:
    cache = Path(cfg.output_dir) / "cache"
    if not (cache / split).is_dir():
        cmd_extract(cfg)
    return load_cache(cache, split)


def _num_classes(cfg: ExperimentConfig) -> int:
    path = Path(cfg.output_dir) / "cache" / "summary.json"
    if path.is_file():
        return int(json.loads(path.read_text())["num_classes"])
    return cfg.data.num_classes


def model_paths(cfg: ExperimentConfig) -> list:
    return [Path(cfg.output_dir) / "models" / f"model_{i}.hcnn" for i in range(cfg.eval.members)]


def cmd_train(cfg: ExperimentConfig, val: bool = True) -> list:
    """Train ``eval.members`` models (seeds seed, seed+1, ...); returns their TrainResults."""
    train = _load_split(cfg, "train")
    test = None
    if val and (Path(cfg.output_dir) / "cache" / "test").is_dir():
        test = load_cache(Path(cfg.output_dir) / "cache", "test")
    arch = cfg.architecture(_num_classes(cfg))
    dtype = _dtype(cfg)
    results = []
    for i, path in enumerate(model_paths(cfg)):
        seed = cfg.seed + i
        log_path = _out(cfg, "models", f"epochs_{i}.jsonl")
        lines = []

        def record(rec, lines=lines, log_path=log_path):
            lines.append(json.dumps(rec.as_dict(), sort_keys=True))
            log_path.write_text("\n".join(lines) + "\n")

        params = init(arch, seed, dtype)
        try:
            res = fit(params, replace(cfg.train, seed=seed), train.maps.astype(dtype), train.labels,
                      None if test is None else test.maps.astype(dtype),
                      None if test is None else test.labels, callback=record)
        except TrainingDiverged as err:
            log.error("model %d diverged: %s (log in %s)", i, err, log_path)
            raise
        save_checkpoint(res.params, path)
        results.append(res)
    return results


def _load_models(cfg: ExperimentConfig, paths=None) -> list:
    paths = paths or model_paths(cfg)
    models = []
    for p in paths:
        try:
            models.append(load_checkpoint(p, _dtype(cfg)))
        except OSError as err:
            raise DataError(f"cannot read checkpoint {p}: {err}") from None
        except ValueError as err:
            raise DataError(f"{p}: {err}") from None
    return models


def evaluate(models: list, fs: FeatureSet, name: str = "eval") -> MetricsReport:
    """Top-N, per-writer accuracy and confusion of the softmax-averaged ensemble."""
    maps = fs.maps.astype(models[0].dtype)
    try:
        probs = ensemble_proba(models, maps)
    except ValueError as err:
        raise DataError(str(err)) from None
    pred = probs.argmax(axis=1)
    writers = []
    for w in np.unique(fs.writers):
        m = fs.writers == w
        writers.append(WriterResult(int(w), int(m.sum()), float((pred[m] == fs.labels[m]).mean())))
    members = [float((predict_proba(p, maps).argmax(axis=1) == fs.labels).mean())
               for p in models] if len(models) > 1 else []
    return MetricsReport(name, len(fs), top_n_accuracies(probs, fs.labels), writers,
                         confused_pairs(pred, fs.labels), {"members": len(models),
                                                           "member_top1": members})


def cmd_eval(cfg: ExperimentConfig, checkpoints=None, split: str = "test") -> MetricsReport:
    models = _load_models(cfg, checkpoints)
    report = evaluate(models, _load_split(cfg, split), f"eval-{split}")
    report.save(_out(cfg, "reports", f"eval_{split}.jsonl"))
    return report


def cmd_adapt(cfg: ExperimentConfig, checkpoint=None) -> MetricsReport:
    """Unsupervised per-writer adaptation on the test split with the first model."""
    params = _load_models(cfg, [checkpoint] if checkpoint else model_paths(cfg)[:1])[0]
    train = _load_split(cfg, "train")
    test = _load_split(cfg, "test")
    layer = cfg.adapt.layer
    means = stm.class_means(stm.source_features(params, train.maps.astype(params.dtype), layer),
                            train.labels, params.arch.num_classes)
    writers = []
    for w in np.unique(test.writers):
        sub = test.writer(int(w))
        if len(sub) == 0:
            log.warning("writer %d has no samples; skipped", w)
            continue
        res = stm.adapt_unsupervised(params, means, sub.maps.astype(params.dtype), cfg.adapt)
        a0 = float((res.initial_predictions == sub.labels).mean())
        a1 = float((res.predictions == sub.labels).mean())
        writers.append(WriterResult(int(w), len(sub), a0, a1,
                                    stm.error_reduction_rate(1.0 - a0, 1.0 - a1)))
        stm.save_transform(res.transform, _out(cfg, "transforms", f"writer_{int(w)}.stma"))
    report = MetricsReport("adapt", len(test), [], writers, [], {
        "mean_acc_before": float(np.mean([r.acc_before for r in writers])),
        "mean_acc_after": float(np.mean([r.acc_after for r in writers])),
        "beta_tilde": cfg.adapt.beta_tilde, "gamma": cfg.adapt.gamma,
        "iterations": cfg.adapt.iterations})
    report.extra["mean_err_reduction"] = report.mean_err_reduction()
    report.save(_out(cfg, "reports", "adapt.jsonl"))
    return report


def _stats(times) -> dict:
    ms = [1000.0 * t for t in times]
    return {"mean_ms": statistics.fmean(ms), "median_ms": statistics.median(ms)}


def cmd_bench(cfg: ExperimentConfig, samples: int = 50, full_samples: int = 5) -> MetricsReport:
    """Per-character wall clock of extraction and batch-1 inference, inputs preloaded.

    Inference is timed for the trained model and, on ``full_samples`` maps, for a
    randomly initialized full-size network as the reference cost.
    """
    manifest = load_manifest(cfg)
    entries = (manifest.split("test") or manifest.split("train"))[:samples]
    raw = [read_sample(e, cfg.features.modality) for e in entries]
    if not raw:
        raise DataError("no samples to benchmark")
    ext, maps = [], []
    for s in raw:
        t0 = time.perf_counter()
        dm = extract_features(s, cfg.features)
        ext.append(time.perf_counter() - t0)
        maps.append(dm.values)
    params = _load_models(cfg, model_paths(cfg)[:1])[0]
    inf = []
    for m in maps:
        x = m[None].astype(params.dtype)
        t0 = time.perf_counter()
        predict_proba(params, x, batch_size=1)
        inf.append(time.perf_counter() - t0)
    full = full_architecture()
    full_inf = []
    if full_samples and maps[0].shape == (full.in_channels, full.size, full.size):
        ref = init(full, cfg.seed, params.dtype)
        for m in maps[:full_samples]:
            x = m[None].astype(params.dtype)
            t0 = time.perf_counter()
            predict_proba(ref, x, batch_size=1)
            full_inf.append(time.perf_counter() - t0)
    report = MetricsReport("bench", len(raw), extra={
        "model_param_bytes": params.nbytes32,
        "full_architecture_params": full.param_count(),
        "full_architecture_bytes": 4 * full.param_count()})
    report.timing = {"extract": _stats(ext), "inference": _stats(inf)}
    if full_inf:
        report.timing["inference_full"] = _stats(full_inf)
    report.save(_out(cfg, "reports", "bench.jsonl"))
    return report


def inspect_file(path) -> dict:
    """Describe a GNT, POT, DMAP, HCNN, STMA or manifest file."""
    from ..convnet import parse_checkpoint
    from ..directmap import parse_dmap
    from ..sampleio import parse_gnt, parse_pot

    p = Path(path)
    try:
        data = p.read_bytes()
    except OSError as err:
        raise DataError(f"cannot read {p}: {err}") from None
    try:
        if data[:4] == b"DMAP":
            dm = parse_dmap(data)
            return {"type": "DMAP", "d": dm.d, "n": dm.n, "label": dm.label, "writer": dm.writer_id,
                    "modality": dm.modality, "sparsity": sparsity(dm)}
        if data[:4] == b"HCNN":
            params = parse_checkpoint(data)
            a = params.arch
            return {"type": "HCNN", "classes": a.num_classes, "conv": list(a.conv_widths),
                    "fc": list(a.fc_widths), "params": a.param_count(), "v": params.input_scale}
        if data[:4] == b"STMA":
            t = stm.parse_transform(data)
            return {"type": "STMA", "d": t.d,
                    "dist_from_identity": float(np.linalg.norm(t.A - np.eye(t.d)))}
        if p.suffix == ".tsv":
            m = DatasetManifest.loads(data.decode())
            return {"type": "manifest", "entries": len(m.entries), "classes": m.num_classes,
                    "writers": len(m.writers())}
        if p.suffix.lower() == ".pot":
            samples = parse_pot(data)
            return {"type": "POT", "samples": len(samples),
                    "strokes": sum(len(s.strokes) for s in samples)}
        samples = parse_gnt(data)
        return {"type": "GNT", "samples": len(samples)}
    except (ValueError, UnicodeDecodeError) as err:
        raise DataError(f"{p}: {err}") from None
