from .arch import Architecture, full_architecture, toy_architecture
from .checkpoint import load_checkpoint, parse_checkpoint, save_checkpoint, serialize_checkpoint
from .network import (NetworkParams, NonFiniteError, RescaleConstant, ensemble_proba,
                      estimate_rescale, features, forward, gradient, head, init, logits,
                      predict_proba, softmax, top_n)
from .train import PlateauSchedule, TrainConfig, TrainingDiverged, TrainResult, accuracy, fit

__all__ = [
    "Architecture", "full_architecture", "toy_architecture", "load_checkpoint", "parse_checkpoint",
    "save_checkpoint", "serialize_checkpoint", "NetworkParams", "NonFiniteError",
    "RescaleConstant", "ensemble_proba", "estimate_rescale", "features", "forward", "gradient",
    "head", "init", "logits", "predict_proba", "softmax", "top_n", "PlateauSchedule",
    "TrainConfig", "TrainingDiverged", "TrainResult", "accuracy", "fit",
]
