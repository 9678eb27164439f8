"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict

from ..convnet import TrainingDiverged
from ..sampleio import FormatError
from .ablations import ABLATIONS, format_table, run_ablation
from .commands import (cmd_adapt, cmd_bench, cmd_eval, cmd_extract, cmd_gen_synth, cmd_train,
                       inspect_file)
from .config import ConfigError, DataError, load_config

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI experiment configuration")
    common.add_argument("--seed", type=int, help="override run.seed")
    common.add_argument("--jobs", type=int, help="worker processes for extraction")
    common.add_argument("--precision", type=int, choices=(32, 64), help="float width")
    common.add_argument("--output-dir", help="override run.output_dir")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hccr", description="Handwritten character recognition "
                                "with directMap features and a convolutional network.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-synth", parents=[common], help="write the synthetic GNT/POT dataset")
    sub.add_parser("extract", parents=[common], help="build the DMAP feature cache")
    sub.add_parser("train", parents=[common], help="train the network(s)")
    ev = sub.add_parser("eval", parents=[common], help="top-N and per-writer evaluation")
    ev.add_argument("checkpoints", nargs="*", help="HCNN files (default: trained models)")
    ev.add_argument("--split", default="test", choices=("train", "test"))
    ad = sub.add_parser("adapt", parents=[common], help="unsupervised writer adaptation")
    ad.add_argument("checkpoint", nargs="?")
    sub.add_parser("bench", parents=[common], help="per-character timings")
    ab = sub.add_parser("ablate", parents=[common], help="run an ablation sweep")
    ab.add_argument("kind", choices=ABLATIONS)
    ins = sub.add_parser("inspect", help="describe a data, feature, model or transform file")
    ins.add_argument("path")
    return p


def _print(obj) -> None:
    print(json.dumps(obj, indent=1, sort_keys=True, default=str))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "inspect":
            _print(inspect_file(args.path))
            return EXIT_OK
        cfg = load_config(args.config, seed=args.seed, jobs=args.jobs, precision=args.precision,
                          output_dir=args.output_dir)
        if args.command == "gen-synth":
            _print({k: str(v) for k, v in cmd_gen_synth(cfg).items()})
        elif args.command == "extract":
            _print(cmd_extract(cfg))
        elif args.command == "train":
            for i, res in enumerate(cmd_train(cfg)):
                last = res.history[-1]
                _print({"model": i, "epochs": len(res.history), "decay_epochs": res.decay_epochs,
                        "train_acc": last.train_acc, "test_acc": last.val_acc})
        elif args.command == "eval":
            rep = cmd_eval(cfg, args.checkpoints or None, args.split)
            _print({"samples": rep.samples, "topn": rep.topn, **rep.extra})
        elif args.command == "adapt":
            rep = cmd_adapt(cfg, args.checkpoint)
            _print({"writers": [asdict(w) for w in rep.writers], **rep.extra})
        elif args.command == "bench":
            rep = cmd_bench(cfg)
            _print({**rep.extra, **rep.timing})
        elif args.command == "ablate":
            print(format_table(run_ablation(cfg, args.kind)))
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, TrainingDiverged) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
