"""Forward and backward passes of the character network.

Activations are kept channel-last (NHWC) so a 3x3 convolution becomes one
matrix product over nine shifted copies of the padded input. Inputs are
given channel-first, ``(batch, d, n, n)``, like directMap values.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .arch import Architecture

INIT_STD = 0.01
WEIGHT_DECAY = 5e-4
# p_mean / p_max aimed for by the input rescaling
TARGET_RATIO = 0.8


class NonFiniteError(FloatingPointError):
    def __init__(self, layer: int):
        super().__init__(f"non-finite activations at layer {layer}")
        self.layer = layer


@dataclass
class NetworkParams:
    arch: Architecture
    weights: list  # [W1, b1, W2, b2, ...] in declaration order
    input_scale: float = 1.0  # rescale constant v, multiplied into every input
    dtype: np.dtype = field(default=np.dtype(np.float32))

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, [w.copy() for w in self.weights], self.input_scale, self.dtype)

    def astype(self, dtype) -> "NetworkParams":
        dtype = np.dtype(dtype)
        return NetworkParams(self.arch, [w.astype(dtype) for w in self.weights], self.input_scale,
                             dtype)

    @property
    def nbytes32(self) -> int:
        return 4 * sum(w.size for w in self.weights)


@dataclass(frozen=True)
class RescaleConstant:
    v: float
    delta: float


def init(arch: Architecture, seed: int, dtype=np.float32) -> NetworkParams:
    """Weights i.i.d. N(0, 0.01^2), biases zero."""
    rng = np.random.default_rng(seed)
    weights = []
    for shape in arch.param_shapes():
        if len(shape) == 1:
            weights.append(np.zeros(shape, dtype=dtype))
        else:
            weights.append((rng.standard_normal(shape) * INIT_STD).astype(dtype))
    return NetworkParams(arch, weights, 1.0, np.dtype(dtype))


# ---------------------------------------------------------------------------
# layer primitives


def _im2col(x):
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    return np.concatenate([xp[:, dy:dy + h, dx:dx + w, :] for dy in range(3) for dx in range(3)],
                          axis=3)


def _col2im(dcols, c):
    b, h, w, _ = dcols.shape
    dxp = np.zeros((b, h + 2, w + 2, c), dtype=dcols.dtype)
    k = 0
    for dy in range(3):
        for dx in range(3):
            dxp[:, dy:dy + h, dx:dx + w, :] += dcols[..., k * c:(k + 1) * c]
            k += 1
    return dxp[:, 1:-1, 1:-1, :]


def conv2d(x, weight, bias):
    """3x3, stride 1, padding 1 convolution; x is NHWC, weight is HWIO."""
    cols = _im2col(x)
    out = cols.reshape(-1, cols.shape[-1]) @ weight.reshape(-1, weight.shape[-1]) + bias
    return out.reshape(x.shape[:3] + (weight.shape[-1],))


def leaky_relu(z, slope=1.0 / 3.0):
    return np.where(z > 0, z, z * slope)


def _pool_windows(a):
    b, h, w, c = a.shape
    return a.reshape(b, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(
        b, h // 2, w // 2, c, 4)


def max_pool(a):
    win = _pool_windows(a)
    arg = win.argmax(axis=-1)
    return np.take_along_axis(win, arg[..., None], axis=-1)[..., 0], arg


def _max_pool_backward(g, arg):
    b, h2, w2, c = g.shape
    win = np.zeros((b, h2, w2, c, 4), dtype=g.dtype)
    np.put_along_axis(win, arg[..., None], g[..., None], axis=-1)
    return win.reshape(b, h2, w2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, 2 * h2, 2 * w2, c)


def log_softmax(s):
    s = s - s.max(axis=-1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))


def softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# passes


def to_nhwc(maps, params: NetworkParams):
    x = np.asarray(maps)
    if x.ndim == 3:
        x = x[None]
    arch = params.arch
    if x.shape[1:] != (arch.in_channels, arch.size, arch.size):
        raise ValueError(f"input shape {x.shape[1:]} does not match the architecture "
                         f"({arch.in_channels}, {arch.size}, {arch.size})")
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1), dtype=params.dtype) * params.dtype.type(
        params.input_scale)


def _hidden(params, i, h, rng, cache):
    """Hidden layer ``i`` (0-based): affine, leaky-ReLU, optional pool, dropout."""
    arch = params.arch
    w, b = params.weights[2 * i], params.weights[2 * i + 1]
    rec = {}
    if i < arch.num_conv:
        cols = _im2col(h)
        z = (cols.reshape(-1, cols.shape[-1]) @ w.reshape(-1, w.shape[-1]) + b).reshape(
            h.shape[:3] + (w.shape[-1],))
        rec["cols"] = cols
    else:
        rec["in_shape"] = h.shape
        h = h.reshape(len(h), -1)
        z = h @ w + b
        rec["x"] = h
    a = np.where(z > 0, z, z * z.dtype.type(arch.slope))
    rec["pos"] = z > 0
    if i < arch.num_conv and (i + 1) in arch.pool_after:
        a, rec["arg"] = max_pool(a)
    p = arch.dropout[i]
    if rng is not None and p > 0:
        mask = (rng.random(a.shape, dtype=a.dtype) >= p).astype(a.dtype) / a.dtype.type(1 - p)
        a = a * mask
        rec["mask"] = mask
    if not np.isfinite(a).all():
        raise NonFiniteError(i + 1)
    if cache is not None:
        cache.append(rec)
    return a


def _output(params, h):
    w, b = params.weights[-2], params.weights[-1]
    s = h.reshape(len(h), -1) @ w + b
    if not np.isfinite(s).all():
        raise NonFiniteError(params.arch.num_hidden + 1)
    return s


def features(params: NetworkParams, maps, layer: int | None = None, mode: str = "eval",
             seed=None):
    """Post-activation output of hidden layer ``layer`` (1-based; default the last)."""
    arch = params.arch
    layer = arch.num_hidden if layer is None else layer
    if not 1 <= layer <= arch.num_hidden:
        raise ValueError(f"hidden layer index {layer} outside 1..{arch.num_hidden}")
    rng = np.random.default_rng(seed) if mode == "train" else None
    h = to_nhwc(maps, params)
    for i in range(layer):
        h = _hidden(params, i, h, rng, None)
    return h.reshape(len(h), -1) if layer > arch.num_conv else h


def head(params: NetworkParams, h, layer: int | None = None):
    """Logits computed from the output of hidden layer ``layer`` (eval mode)."""
    arch = params.arch
    layer = arch.num_hidden if layer is None else layer
    h = np.asarray(h, dtype=params.dtype)
    for i in range(layer, arch.num_hidden):
        h = _hidden(params, i, h, None, None)
    return _output(params, h)


def logits(params: NetworkParams, maps, mode: str = "eval", seed=None):
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = np.random.default_rng(seed) if mode == "train" else None
    h = to_nhwc(maps, params)
    for i in range(params.arch.num_hidden):
        h = _hidden(params, i, h, rng, None)
    return _output(params, h)


def forward(params: NetworkParams, maps, mode: str = "eval", seed=None):
    """Class probabilities, shape (batch, C)."""
    return softmax(logits(params, maps, mode, seed))


def predict_proba(params: NetworkParams, maps, batch_size: int = 256):
    maps = np.asarray(maps)
    out = [forward(params, maps[i:i + batch_size]) for i in range(0, len(maps), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, params.arch.num_classes))


def gradient(params: NetworkParams, maps, labels, seed=None, dropout: bool = True,
             weight_decay: float = WEIGHT_DECAY):
    """Gradients of mean NLL + (wd / 2) * sum ||W||^2 over weight tensors (not biases).

    Dropout masks come from ``default_rng(seed)``. Returns
    ``(grads, loss, logits)``; ``loss`` excludes the decay term.
    """
    arch = params.arch
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= arch.num_classes:
        raise ValueError("label outside [0, C)")
    rng = np.random.default_rng(seed) if dropout else None
    cache = []
    h = to_nhwc(maps, params)
    for i in range(arch.num_hidden):
        h = _hidden(params, i, h, rng, cache)
    last = h
    s = _output(params, h)
    lsm = log_softmax(s)
    n = len(labels)
    loss = float(-lsm[np.arange(n), labels].mean())
    if not math.isfinite(loss):
        raise NonFiniteError(arch.num_hidden + 1)
    ds = np.exp(lsm)
    ds[np.arange(n), labels] -= 1
    ds /= n

    grads = [None] * len(params.weights)
    grads[-2] = last.T @ ds
    grads[-1] = ds.sum(axis=0)
    g = ds @ params.weights[-2].T
    for i in range(arch.num_hidden - 1, -1, -1):
        rec = cache[i]
        w = params.weights[2 * i]
        if "mask" in rec:
            g = g * rec["mask"]
        if "arg" in rec:
            g = _max_pool_backward(g, rec["arg"])
        g = np.where(rec["pos"], g, g * g.dtype.type(arch.slope))
        if i < arch.num_conv:
            cols = rec["cols"]
            g2 = g.reshape(-1, g.shape[-1])
            grads[2 * i] = (cols.reshape(-1, cols.shape[-1]).T @ g2).reshape(w.shape)
            grads[2 * i + 1] = g2.sum(axis=0)
            if i > 0:
                g = _col2im((g2 @ w.reshape(-1, w.shape[-1]).T).reshape(cols.shape), w.shape[2])
        else:
            grads[2 * i] = rec["x"].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = (g @ w.T).reshape(rec["in_shape"])
    if weight_decay:
        for k in range(0, len(grads), 2):
            grads[k] = grads[k] + params.dtype.type(weight_decay) * params.weights[k]
    return grads, loss, s


def estimate_rescale(params: NetworkParams, maps, batch_size: int = 256) -> RescaleConstant:
    """Average logit gap s_max - s_mean of the current net and v = -ln(0.8) / gap.

    The gap is measured without any input scaling.
    """
    probe = NetworkParams(params.arch, params.weights, 1.0, params.dtype)
    maps = np.asarray(maps)
    gaps = []
    for i in range(0, len(maps), batch_size):
        s = logits(probe, maps[i:i + batch_size]).astype(np.float64)
        gaps.append(s.max(axis=1) - s.mean(axis=1))
    if not gaps:
        raise ValueError("no samples to estimate the rescale constant")
    delta = float(np.concatenate(gaps).mean())
    if not math.isfinite(delta) or delta <= 0:
        raise ValueError(f"degenerate logit gap {delta}")
    return RescaleConstant(-math.log(TARGET_RATIO) / delta, delta)


def top_n(probs, n: int = 1):
    """Indices of the ``n`` largest entries per row; ties go to the lower index."""
    probs = np.atleast_2d(probs)
    if n < 1:
        raise ValueError("n must be >= 1")
    return np.argsort(-probs, axis=1, kind="stable")[:, :n]


def ensemble_proba(models, maps, batch_size: int = 256):
    """Mean of the members' softmax outputs."""
    if not models:
        raise ValueError("an ensemble needs at least one model")
    arch = models[0].arch
    for m in models[1:]:
        if m.arch != arch:
            raise ValueError("ensemble members have different architectures")
    total = None
    for m in models:
        p = predict_proba(m, maps, batch_size).astype(np.float64)
        total = p if total is None else total + p
    return total / len(models)
