"""Writer adaptation by an affine style-transfer layer on top of a trained network.

The layer ``phi -> A phi + b`` sits after a source hidden layer (by
default the bottleneck). ``A`` and ``b`` solve a confidence-weighted
ridge problem that pulls each sample toward the mean of its (predicted)
class while penalizing distance from the identity transform.
"""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .convnet import network
from .convnet.network import NetworkParams

log = logging.getLogger(__name__)


@dataclass
class ClassMeans:
    means: np.ndarray  # (c, d); rows of undefined classes are NaN
    counts: np.ndarray  # (c,)

    @property
    def defined(self) -> np.ndarray:
        return self.counts > 0


def class_means(feats, labels, num_classes: int | None = None) -> ClassMeans:
    feats = np.asarray(feats, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    c = int(labels.max()) + 1 if num_classes is None else num_classes
    if len(labels) and (labels.min() < 0 or labels.max() >= c):
        raise ValueError("label outside [0, num_classes)")
    counts = np.bincount(labels, minlength=c)
    sums = np.zeros((c, feats.shape[1]))
    np.add.at(sums, labels, feats)
    means = np.full_like(sums, np.nan)
    ok = counts > 0
    means[ok] = sums[ok] / counts[ok, None]
    return ClassMeans(means, counts)


@dataclass
class StyleTransform:
    A: np.ndarray
    b: np.ndarray

    @classmethod
    def identity(cls, d: int):
        return cls(np.eye(d), np.zeros(d))

    @property
    def d(self) -> int:
        return len(self.b)


def apply(transform: StyleTransform, phi) -> np.ndarray:
    """``A phi + b`` for one vector or row-wise for a batch."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape[-1] != transform.d:
        raise ValueError(f"feature width {phi.shape[-1]} != transform width {transform.d}")
    return phi @ transform.A.T + transform.b


def stm_objective(transform: StyleTransform, phi, targets, f, beta, gamma) -> float:
    r = apply(transform, phi) - targets
    return float((np.asarray(f) * (r * r).sum(axis=1)).sum()
                 + beta * ((transform.A - np.eye(transform.d)) ** 2).sum()
                 + gamma * (transform.b ** 2).sum())


def solve_stm(phi, targets, f, beta: float, gamma: float = 0.0) -> StyleTransform:
    """Closed-form minimizer of the confidence-weighted transfer objective.

    ``beta = inf`` pins the transform to the identity.
    """
    phi = np.asarray(phi, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    f = np.asarray(f, dtype=np.float64)
    if phi.ndim != 2 or t.shape != phi.shape or f.shape != (len(phi),):
        raise ValueError("phi, targets and confidences have inconsistent shapes")
    if not (np.isfinite(phi).all() and np.isfinite(t).all() and np.isfinite(f).all()):
        raise ValueError("non-finite adaptation inputs")
    if np.any(f < 0) or beta < 0 or gamma < 0:
        raise ValueError("confidences, beta and gamma must be non-negative")
    d = phi.shape[1]
    if math.isinf(beta):
        return StyleTransform.identity(d)
    fs = f.sum()
    denom = fs + gamma
    if denom == 0:
        return StyleTransform.identity(d)
    phi_bar = f @ phi
    t_bar = f @ t
    eye = np.eye(d)
    P = (phi * f[:, None]).T @ phi - np.outer(phi_bar, phi_bar) / denom + beta * eye
    Q = (t * f[:, None]).T @ phi - np.outer(t_bar, phi_bar) / denom + beta * eye
    try:
        A = np.linalg.solve(P.T, Q.T).T
    except np.linalg.LinAlgError as err:
        raise ValueError("singular system; use beta > 0") from err
    b = (t_bar - A @ phi_bar) / denom
    return StyleTransform(A, b)


def beta_from_ratio(beta_tilde: float, phi, f) -> float:
    """beta = beta~/(1 - beta~) * mean over dims of the weighted feature energy."""
    if not 0.0 <= beta_tilde <= 1.0:
        raise ValueError("beta_tilde must lie in [0, 1]")
    if beta_tilde == 1.0:
        return math.inf
    phi = np.asarray(phi, dtype=np.float64)
    energy = float((np.asarray(f) * (phi * phi).sum(axis=1)).sum()) / phi.shape[1]
    return beta_tilde / (1.0 - beta_tilde) * energy


@dataclass(frozen=True)
class AdaptConfig:
    beta_tilde: float = 0.2
    gamma: float = 0.0
    iterations: int = 3
    layer: int | None = None  # source hidden layer (1-based); default the bottleneck

    def __post_init__(self):
        if not 0.0 <= self.beta_tilde <= 1.0:
            raise ValueError("beta_tilde must lie in [0, 1]")
        if self.gamma < 0 or self.iterations < 1:
            raise ValueError("gamma must be >= 0 and iterations >= 1")


@dataclass
class AdaptResult:
    predictions: np.ndarray
    initial_predictions: np.ndarray
    transform: StyleTransform
    confidences: np.ndarray


def source_features(params: NetworkParams, maps, layer: int | None = None, batch_size: int = 256):
    maps = np.asarray(maps)
    parts = [network.features(params, maps[i:i + batch_size], layer).reshape(
        min(batch_size, len(maps) - i), -1) for i in range(0, len(maps), batch_size)]
    return np.concatenate(parts).astype(np.float64)


def adapted_logits(params: NetworkParams, phi, transform: StyleTransform, layer=None):
    """Logits after inserting the transform behind the source layer."""
    z = apply(transform, phi)
    layer = params.arch.num_hidden if layer is None else layer
    if layer <= params.arch.num_conv:
        raise ValueError("the adaptation layer must follow a fully connected layer")
    return network.head(params, z, layer)


def adapt_unsupervised(params: NetworkParams, means: ClassMeans, maps,
                       config: AdaptConfig = AdaptConfig()) -> AdaptResult:
    """Self-training: predict, weight by confidence, re-solve; ``config.iterations`` rounds.

    The returned predictions come from the final transform. ``params`` is
    never modified.
    """
    maps = np.asarray(maps)
    if len(maps) == 0:
        raise ValueError("no samples to adapt on")
    phi = source_features(params, maps, config.layer)
    if phi.shape[1] != means.means.shape[1]:
        raise ValueError("class means were estimated on a different layer")
    transform = StyleTransform.identity(phi.shape[1])
    initial = None
    for _ in range(config.iterations):
        probs = network.softmax(adapted_logits(params, phi, transform, config.layer).astype(np.float64))
        pred = probs.argmax(axis=1)
        if initial is None:
            initial = pred
        conf = probs.max(axis=1)
        ok = means.defined[pred]
        if not ok.all():
            log.warning("skipping %d samples predicted as classes without a mean", int((~ok).sum()))
        beta = beta_from_ratio(config.beta_tilde, phi[ok], conf[ok])
        transform = solve_stm(phi[ok], means.means[pred[ok]], conf[ok], beta, config.gamma)
    probs = network.softmax(adapted_logits(params, phi, transform, config.layer).astype(np.float64))
    return AdaptResult(probs.argmax(axis=1), initial, transform, probs.max(axis=1))


def error_reduction_rate(err_initial: float, err_adapted: float):
    """(e0 - e1) / e0, or None when the initial error is zero."""
    if err_initial == 0:
        return None
    return (err_initial - err_adapted) / err_initial


# ---------------------------------------------------------------------------
# STMA files: "STMA" | u32 d | A row-major f64 | b f64

STMA_MAGIC = b"STMA"


def serialize_transform(transform: StyleTransform) -> bytes:
    d = transform.d
    if transform.A.shape != (d, d):
        raise ValueError("A must be d x d")
    return (STMA_MAGIC + struct.pack("<I", d) + np.ascontiguousarray(transform.A, "<f8").tobytes()
            + np.ascontiguousarray(transform.b, "<f8").tobytes())


def parse_transform(data: bytes) -> StyleTransform:
    if len(data) < 8 or data[:4] != STMA_MAGIC:
        raise ValueError("not an STMA file")
    (d,) = struct.unpack_from("<I", data, 4)
    if len(data) != 8 + 8 * d * (d + 1):
        raise ValueError("STMA payload size does not match d")
    A = np.frombuffer(data, "<f8", d * d, 8).reshape(d, d).astype(np.float64)
    b = np.frombuffer(data, "<f8", d, 8 + 8 * d * d).astype(np.float64)
    return StyleTransform(A, b)


def save_transform(transform: StyleTransform, path) -> None:
    Path(path).write_bytes(serialize_transform(transform))


def load_transform(path) -> StyleTransform:
    return parse_transform(Path(path).read_bytes())
