"""Traditional feature pipeline: blurred sampling, Box-Cox, projection, NPC / MQDF."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

# sampling interval of the 8x8 grid on a 32x32 plane and its matched blur
GRID_STEP = 4
BLUR_SIGMA = GRID_STEP * math.sqrt(2.0) / math.pi
FDA_EPS = 1e-4
EIG_FLOOR = 1e-10


def blur_weights(n: int = 32, step: int = GRID_STEP, sigma: float = BLUR_SIGMA):
    """(n // step, n) matrix of normalized, 3-sigma truncated Gaussian weights.

    Sample point ``k`` sits at the center ``step * k + step / 2`` of its
    cell; pixel ``j`` is centered at ``j + 0.5``.
    """
    centers = step * np.arange(n // step) + step / 2.0
    dist = (np.arange(n) + 0.5)[None, :] - centers[:, None]
    w = np.exp(-dist**2 / (2.0 * sigma**2))
    w[np.abs(dist) > 3.0 * sigma] = 0.0
    return w / w.sum(axis=1, keepdims=True)


def blur_sample(maps, step: int = GRID_STEP, sigma: float = BLUR_SIGMA) -> np.ndarray:
    """Blurred 8x8 samples of every plane, flattened plane-major (512 for 8x32x32).

    Accepts one ``(d, n, n)`` map or a batch ``(N, d, n, n)``.
    """
    maps = np.asarray(getattr(maps, "values", maps), dtype=np.float64)
    single = maps.ndim == 3
    if single:
        maps = maps[None]
    w = blur_weights(maps.shape[-1], step, sigma)
    feats = np.einsum("kr,ndrc,lc->ndkl", w, maps, w, optimize=True)
    feats = feats.reshape(len(maps), -1)
    return feats[0] if single else feats


def boxcox(x) -> np.ndarray:
    """Power transform with exponent 0.5."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("Box-Cox input must be non-negative")
    return np.sqrt(x)


@dataclass
class ProjectionModel:
    mean: np.ndarray
    basis: np.ndarray  # (D, out_dim)
    kind: str
    eigenvalues: np.ndarray

    def transform(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.basis


def scatter_matrices(x, labels):
    """Pooled within-class covariance and between-class covariance (both / N)."""
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    mu = x.mean(axis=0)
    d = x.shape[1]
    sw = np.zeros((d, d))
    sb = np.zeros((d, d))
    for c in np.unique(labels):
        xc = x[labels == c]
        mc = xc.mean(axis=0)
        r = xc - mc
        sw += r.T @ r
        sb += len(xc) * np.outer(mc - mu, mc - mu)
    return sw / len(x), sb / len(x)


def fit_projection(x, labels, kind: str = "fda", out_dim: int = 160) -> ProjectionModel:
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    d = x.shape[1]
    mu = x.mean(axis=0)
    if kind == "pca":
        if not 1 <= out_dim <= d:
            raise ValueError(f"out_dim must lie in [1, {d}]")
        vals, vecs = linalg.eigh(np.cov(x, rowvar=False, bias=True))
        order = np.argsort(vals)[::-1][:out_dim]
        return ProjectionModel(mu, vecs[:, order], "pca", vals[order])
    if kind != "fda":
        raise ValueError(f"unknown projection kind {kind!r}")
    classes, counts = np.unique(labels, return_counts=True)
    if not 1 <= out_dim <= min(len(classes) - 1, d):
        raise ValueError(f"FDA out_dim must lie in [1, {min(len(classes) - 1, d)}]")
    if counts.min() < 2:
        raise ValueError("FDA needs at least 2 samples per class")
    sw, sb = scatter_matrices(x, labels)
    reg = sw + FDA_EPS * np.trace(sw) / d * np.eye(d)
    try:
        vals, vecs = linalg.eigh(sb, reg)
    except linalg.LinAlgError as err:
        raise ValueError("within-class scatter is singular beyond regularization") from err
    order = np.argsort(vals)[::-1][:out_dim]
    vecs = vecs[:, order]
    # unit within-class variance along every direction
    norms = np.sqrt(np.einsum("ij,ik,kj->j", vecs, sw, vecs))
    vecs = vecs / np.where(norms > 0, norms, 1.0)
    return ProjectionModel(mu, vecs, "fda", vals[order])


# ---------------------------------------------------------------------------
# classifiers


def class_prototypes(x, labels, num_classes: int | None = None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    c = int(labels.max()) + 1 if num_classes is None else num_classes
    return np.stack([x[labels == k].mean(axis=0) for k in range(c)])


def npc_classify(means, x, chunk: int = 256) -> np.ndarray:
    """Nearest class mean by Euclidean distance; ties go to the lower index."""
    means = np.asarray(means, dtype=np.float64)
    if means.size == 0:
        raise ValueError("empty prototype set")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    out = np.concatenate([
        (((x[i:i + chunk, None, :] - means[None]) ** 2).sum(axis=2)).argmin(axis=1)
        for i in range(0, len(x), chunk)
    ])
    return int(out[0]) if single else out


@dataclass
class MqdfModel:
    means: np.ndarray  # (c, d)
    eigvals: np.ndarray  # (c, k), descending
    eigvecs: np.ndarray  # (c, d, k)
    delta: float

    @property
    def k(self) -> int:
        return self.eigvals.shape[1]


def fit_mqdf(x, labels, k: int = 10, delta: float | None = None,
             num_classes: int | None = None) -> MqdfModel:
    """Per-class Gaussian with k principal axes and a shared minor eigenvalue.

    ``delta`` defaults to the mean discarded eigenvalue over all classes
    (1.0 when nothing is discarded).
    """
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    d = x.shape[1]
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}]")
    c = int(labels.max()) + 1 if num_classes is None else num_classes
    means, vals_k, vecs_k, minor = [], [], [], []
    for cls in range(c):
        xc = x[labels == cls]
        if len(xc) == 0:
            raise ValueError(f"class {cls} has no samples")
        mu = xc.mean(axis=0)
        r = xc - mu
        vals, vecs = linalg.eigh(r.T @ r / len(xc))
        vals, vecs = vals[::-1], vecs[:, ::-1]
        vals = np.maximum(vals, EIG_FLOOR * max(vals[0], 0.0))
        if vals[0] <= 0:
            raise ValueError(f"class {cls} has zero covariance")
        means.append(mu)
        vals_k.append(vals[:k])
        vecs_k.append(vecs[:, :k])
        minor.append(vals[k:])
    if delta is None:
        rest = np.concatenate(minor)
        delta = float(np.mean([m.mean() for m in minor])) if rest.size else 1.0
    if not delta > 0:
        raise ValueError("minor eigenvalue constant must be positive")
    return MqdfModel(np.stack(means), np.stack(vals_k), np.stack(vecs_k), float(delta))


def mqdf_discriminants(model: MqdfModel, x) -> np.ndarray:
    """g_c(x) for every class, shape (N, c); smaller is better."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = x.shape[1]
    diff = x[:, None, :] - model.means[None]  # (N, c, d)
    proj = np.einsum("ncd,cdk->nck", diff, model.eigvecs)
    major = (proj**2 / model.eigvals[None]).sum(axis=2)
    resid = (diff**2).sum(axis=2) - (proj**2).sum(axis=2)
    return (major + resid / model.delta + np.log(model.eigvals).sum(axis=1)[None]
            + (d - model.k) * math.log(model.delta))


def mqdf_classify(model: MqdfModel, x, chunk: int = 256):
    """Argmin class (ties -> lower index) and the discriminant values."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    g = np.concatenate([mqdf_discriminants(model, x[i:i + chunk]) for i in range(0, len(x), chunk)])
    return g.argmin(axis=1), g
