"""Ablation sweeps: each variant runs extract, train and eval end to end in its own directory.

All variants share one synthetic data directory so they see identical samples.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .commands import cmd_eval, cmd_extract, cmd_gen_synth, cmd_train
from .config import ExperimentConfig

ABLATIONS = ("dropout", "gray", "mode", "input")


def variants(cfg: ExperimentConfig, kind: str) -> list:
    """(name, config) pairs for one ablation."""
    f, net = cfg.features, cfg.network
    if kind == "dropout":
        return [("dropout", replace(cfg, network=replace(net, no_dropout=False))),
                ("no-dropout", replace(cfg, network=replace(net, no_dropout=True)))]
    if kind == "gray":
        return [(m, replace(cfg, features=replace(f, gray_mode=m)))
                for m in ("none", "linear", "nonlinear")]
    if kind == "mode":
        return [(m, replace(cfg, features=replace(f, mode=m))) for m in ("cooperated", "based")]
    if kind == "input":
        return [(m, replace(cfg, features=replace(f, input=m))) for m in ("directmap", "image")]
    raise ValueError(f"unknown ablation {kind!r}; choose from {', '.join(ABLATIONS)}")


@dataclass
class AblationRow:
    variant: str
    train_acc: float  # final eval-mode (or running) training accuracy of the first model
    test_acc: float
    epochs: int
    first_perfect_epoch: int | None  # first epoch whose running train accuracy hit 1.0
    history: list


def run_ablation(cfg: ExperimentConfig, kind: str) -> list:
    root = Path(cfg.output_dir)
    shared = cfg.data_path if cfg.data_dir else root / "data"
    base = replace(cfg, data_dir=str(shared))
    if cfg.data.source == "synthetic" and not (shared / "manifest_offline.tsv").is_file():
        cmd_gen_synth(base)
    rows = []
    for name, vcfg in variants(base, kind):
        vcfg = replace(vcfg, output_dir=str(root / f"ablation_{kind}" / name)).validate()
        cmd_extract(vcfg)
        res = cmd_train(vcfg)[0]
        report = cmd_eval(vcfg)
        perfect = [r.epoch for r in res.history if r.train_acc_running >= 1.0]
        rows.append(AblationRow(name, res.history[-1].train_acc, report.topn[0], len(res.history),
                                perfect[0] if perfect else None,
                                [r.as_dict() for r in res.history]))
    table = root / f"ablation_{kind}.jsonl"
    table.write_text("".join(json.dumps({k: v for k, v in vars(r).items() if k != "history"},
                                        sort_keys=True) + "\n" for r in rows))
    return rows


def format_table(rows) -> str:
    lines = [f"{'variant':<12} {'train':>7} {'test':>7} {'epochs':>6} {'100%@':>6}"]
    for r in rows:
        perfect = "-" if r.first_perfect_epoch is None else str(r.first_perfect_epoch)
        lines.append(f"{r.variant:<12} {r.train_acc:7.4f} {r.test_acc:7.4f} {r.epochs:6d} "
                     f"{perfect:>6}")
    return "\n".join(lines)
