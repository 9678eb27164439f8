"""Mini-batch SGD with momentum, weight decay and plateau learning-rate decay."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import network
from .network import NetworkParams, NonFiniteError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1000
    momentum: float = 0.9
    learning_rate: float = 0.005
    decay: float = 0.3
    weight_decay: float = 5e-4
    patience: int = 2
    max_decays: int = 3
    max_epochs: int = 100
    seed: int = 0
    rescale_samples: int = 10_000
    eval_train: bool = True  # measure training accuracy in eval mode after each epoch
    stop_at: float = 0.0  # stop once the (eval or running) training accuracy reaches this; 0 = off

    def __post_init__(self):
        for name in ("batch_size", "patience", "max_epochs", "rescale_samples"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.decay < 1.0:
            raise ValueError("decay factor must lie in (0, 1)")
        if self.learning_rate <= 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("learning rate must be positive; momentum and weight decay >= 0")
        if self.max_decays < 0:
            raise ValueError("max_decays must be >= 0")


class PlateauSchedule:
    """Multiply the rate by ``decay`` when the best accuracy stalls for ``patience`` epochs.

    After the last allowed decay the schedule runs ``patience`` more epochs
    and then reports ``done``.
    """

    def __init__(self, lr: float, decay: float = 0.3, patience: int = 2, max_decays: int = 3):
        self.lr = lr
        self.decay = decay
        self.patience = patience
        self.max_decays = max_decays
        self.best = -math.inf
        self.stale = 0
        self.decays = 0
        self.since_last = 0
        self.decay_epochs = []
        self.epoch = 0

    def step(self, accuracy: float) -> bool:
        """Record one epoch; True when the rate was just decayed."""
        self.epoch += 1
        self.since_last += 1
        if accuracy > self.best:
            self.best = accuracy
            self.stale = 0
        else:
            self.stale += 1
        if self.decays < self.max_decays and self.stale >= self.patience:
            self.lr *= self.decay
            self.decays += 1
            self.stale = 0
            self.since_last = 0
            self.decay_epochs.append(self.epoch)
            return True
        return False

    @property
    def done(self) -> bool:
        return self.decays >= self.max_decays and self.since_last >= self.patience


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    train_acc_running: float  # train-mode accuracy accumulated over the epoch's batches
    train_acc: float  # eval-mode accuracy on the training set (running value if not measured)
    val_acc: float | None = None
    decayed: bool = False
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class TrainResult:
    params: NetworkParams
    history: list = field(default_factory=list)
    rescale: network.RescaleConstant | None = None

    @property
    def decay_epochs(self) -> list:
        return [r.epoch for r in self.history if r.decayed]


def accuracy(params: NetworkParams, maps, labels, batch_size: int = 256) -> float:
    if len(labels) == 0:
        return float("nan")
    probs = network.predict_proba(params, maps, batch_size)
    return float((probs.argmax(axis=1) == np.asarray(labels)).mean())


def fit(params: NetworkParams, config: TrainConfig, maps, labels, val_maps=None, val_labels=None,
        rescale: bool = True, callback=None) -> TrainResult:
    """Train a copy of ``params``; fully determined by ``config.seed`` and the data order.

    With ``rescale`` the input constant v is estimated first on at most
    ``config.rescale_samples`` training maps and frozen.
    """
    params = params.copy()
    maps = np.asarray(maps)
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    if n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    const = None
    if rescale:
        pick = np.sort(rng.permutation(n)[:config.rescale_samples])
        const = network.estimate_rescale(params, maps[pick])
        params.input_scale = const.v
        log.info("rescale: delta=%.6g v=%.6g", const.delta, const.v)

    velocity = [np.zeros_like(w) for w in params.weights]
    sched = PlateauSchedule(config.learning_rate, config.decay, config.patience, config.max_decays)
    history = []
    mom = params.dtype.type(config.momentum)
    order = rng.permutation(n)
    for epoch in range(1, config.max_epochs + 1):
        start = time.perf_counter()
        lr = sched.lr
        step = params.dtype.type(lr)
        total_loss, correct = 0.0, 0
        for b0 in range(0, n, config.batch_size):
            idx = order[b0:b0 + config.batch_size]
            seed = int(rng.integers(2**63))
            try:
                grads, loss, s = network.gradient(params, maps[idx], labels[idx], seed=seed,
                                                  weight_decay=config.weight_decay)
            except NonFiniteError as err:
                raise TrainingDiverged(f"epoch {epoch}: {err}", history) from err
            total_loss += loss * len(idx)
            correct += int((s.argmax(axis=1) == labels[idx]).sum())
            for w, v, g in zip(params.weights, velocity, grads):
                v *= mom
                v -= step * g
                w += v
        running = correct / n
        train_acc = accuracy(params, maps, labels) if config.eval_train else running
        val_acc = accuracy(params, val_maps, val_labels) if val_labels is not None else None
        decayed = sched.step(train_acc)
        rec = EpochRecord(epoch, lr, total_loss / n, running, train_acc, val_acc, decayed,
                          time.perf_counter() - start)
        history.append(rec)
        log.info("epoch %d lr=%.3g loss=%.4f train=%.4f val=%s%s", epoch, lr, rec.loss, train_acc,
                 "-" if val_acc is None else f"{val_acc:.4f}", " (decay)" if decayed else "")
        if callback is not None:
            callback(rec)
        if not math.isfinite(rec.loss):
            raise TrainingDiverged(f"epoch {epoch}: non-finite loss", history)
        if sched.done or (config.stop_at > 0 and train_acc >= config.stop_at):
            break
        order = rng.permutation(n)
    return TrainResult(params, history, const)
