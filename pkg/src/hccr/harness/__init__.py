from .commands import (cmd_adapt, cmd_bench, cmd_eval, cmd_extract, cmd_gen_synth, cmd_train,
                       evaluate, inspect_file, load_manifest)
from .config import ConfigError, DataError, ExperimentConfig, load_config
from .metrics import MetricsReport, WriterResult, top_n_accuracies

__all__ = [
    "cmd_adapt", "cmd_bench", "cmd_eval", "cmd_extract", "cmd_gen_synth", "cmd_train", "evaluate",
    "inspect_file", "load_manifest", "ConfigError", "DataError", "ExperimentConfig", "load_config",
    "MetricsReport", "WriterResult", "top_n_accuracies",
]
