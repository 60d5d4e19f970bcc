"""1D residual conv classifier in plain numpy: forward, loss and exact backprop.

Activations are kept channels-last, ``(batch, time, channels)``, so each conv
is a single im2col matmul. Inputs and the public weight layout follow the
usual ``(batch, channels, time)`` / ``(out, in, kernel)`` convention.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LOG_CLIP = 1e-12


class ShapeError(ValueError):
    pass


class CacheMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    in_channels: int = 5
    channels: int = 12
    n_blocks: int = 5
    kernels: tuple[int, ...] = (7, 5, 3)
    n_classes: int = 3
    window: int = 600
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))
        if any(k % 2 == 0 or k < 1 for k in self.kernels):
            raise ValueError(f"kernel sizes must be odd and positive, got {self.kernels}")
        if self.n_blocks < 1 or self.channels < 1:
            raise ValueError("need at least one block and one channel")

    @classmethod
    def tiny(cls) -> "Architecture":
        """Small variant used for gradient checks and overfit runs."""
        return cls(channels=4, n_blocks=2, window=50)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernels"] = list(self.kernels)
        return d


class ClassProbs(NamedTuple):
    p0: float
    p1: float
    p2: float

    @property
    def predicted(self) -> int:
        return argmax_high(np.array(self))

    @property
    def confidence(self) -> float:
        return max(self)


def argmax_high(p: np.ndarray) -> np.ndarray | int:
    """Argmax along the last axis, ties resolved toward the larger class index."""
    p = np.asarray(p)
    rev = p[..., ::-1].argmax(axis=-1)
    out = p.shape[-1] - 1 - rev
    return int(out) if np.ndim(out) == 0 else out


@dataclass
class Network:
    """Parameters and batch-norm running statistics, in declared order."""

    arch: Architecture
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    dtype: np.dtype = field(default=np.dtype(np.float32))

    def copy(self) -> "Network":
        return Network(
            self.arch,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
            self.dtype,
        )

    def astype(self, dtype) -> "Network":
        dtype = np.dtype(dtype)
        return Network(
            self.arch,
            {k: v.astype(dtype) for k, v in self.params.items()},
            {k: v.astype(dtype) for k, v in self.buffers.items()},
            dtype,
        )

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def _block_in_channels(arch: Architecture, b: int) -> int:
    return arch.in_channels if b == 0 else arch.channels


def init_network(arch: Architecture = Architecture(), seed: int | np.random.Generator = 0, dtype=np.float32) -> Network:
    """Fan-in scaled uniform weights and biases; BN gamma 1, beta 0, running var 1."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    buffers: dict[str, np.ndarray] = {}

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    c = arch.channels
    for b in range(arch.n_blocks):
        c_in = _block_in_channels(arch, b)
        for j, k in enumerate(arch.kernels):
            ci = c_in if j == 0 else c
            params[f"blocks.{b}.conv{j}.weight"] = uniform((c, ci, k), ci * k)
            params[f"blocks.{b}.conv{j}.bias"] = uniform((c,), ci * k)
            params[f"blocks.{b}.bn{j}.gamma"] = np.ones(c)
            params[f"blocks.{b}.bn{j}.beta"] = np.zeros(c)
            buffers[f"blocks.{b}.bn{j}.running_mean"] = np.zeros(c)
            buffers[f"blocks.{b}.bn{j}.running_var"] = np.ones(c)
        if c_in != c:
            params[f"blocks.{b}.proj.weight"] = uniform((c, c_in, 1), c_in)
            params[f"blocks.{b}.proj.bias"] = uniform((c,), c_in)
    params["head.weight"] = uniform((arch.n_classes, c), c)
    params["head.bias"] = uniform((arch.n_classes,), c)
    return Network(arch, params, buffers).astype(dtype)


# --- layers (channels-last) ----------------------------------------------------

def conv1d_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """Stride-1 convolution with symmetric zero padding ``(k - 1) / 2``; length preserved."""
    n, length, c = x.shape
    o, c_w, k = weight.shape
    if c_w != c:
        raise ShapeError(f"conv expects {c_w} input channels, got {c}")
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0))) if pad else x
    win = sliding_window_view(xp, k, axis=1)
    out_len = win.shape[1]
    cols = win.reshape(n * out_len, c * k)
    w2 = weight.reshape(o, c * k).T
    y = (cols @ w2).reshape(n, out_len, o) + bias
    return y, (cols, x.shape)


def conv1d_backward(dy: np.ndarray, weight: np.ndarray, cache):
    cols, (n, length, c) = cache
    o, _, k = weight.shape
    pad = (k - 1) // 2
    dy2 = dy.reshape(n * length, o)
    dweight = (dy2.T @ cols).reshape(o, c, k)
    dbias = dy2.sum(axis=0)
    dcols = (dy2 @ weight.reshape(o, c * k)).reshape(n, length, c, k)
    if k == 1:
        return dcols[..., 0], dweight, dbias
    dxp = np.zeros((n, length + k - 1, c), dtype=dy.dtype)
    for j in range(k):
        dxp[:, j : j + length, :] += dcols[:, :, :, j]
    return dxp[:, pad : pad + length, :], dweight, dbias


def batchnorm_forward(x, gamma, beta, running_mean, running_var, eps, momentum, train: bool):
    """Per-channel normalisation over batch and time. Updates running stats in place when training."""
    if train:
        m = x.shape[0] * x.shape[1]
        mean = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std)


def batchnorm_backward(dy, gamma, cache):
    xhat, inv_std = cache
    m = dy.shape[0] * dy.shape[1]
    dbeta = dy.sum(axis=(0, 1))
    dgamma = (dy * xhat).sum(axis=(0, 1))
    dxhat = dy * gamma
    dx = (inv_std / m) * (m * dxhat - dxhat.sum(axis=(0, 1)) - xhat * (dxhat * xhat).sum(axis=(0, 1)))
    return dx, dgamma, dbeta


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# --- network -----------------------------------------------------------------

@dataclass
class ForwardCache:
    inputs: np.ndarray
    train: bool
    layers: dict = field(default_factory=dict)
    pooled: np.ndarray | None = None
    probs: np.ndarray | None = None
    length: int = 0
    conv_lengths: list[int] = field(default_factory=list)


def as_batch(batch, arch: Architecture, dtype) -> np.ndarray:
    x = np.asarray(batch if isinstance(batch, np.ndarray) else np.stack(list(batch)), dtype=dtype)
    if x.ndim != 3 or x.shape[1] != arch.in_channels or x.shape[2] != arch.window:
        raise ShapeError(
            f"expected batch of shape (n, {arch.in_channels}, {arch.window}), got {x.shape}"
        )
    return x


def forward(net: Network, batch, mode: str = "eval", update_stats: bool = True, bn_momentum: float | None = None):
    """Class probabilities ``(n, n_classes)`` and the cache needed for ``backward``.

    ``mode='train'`` normalises with batch statistics (and, unless
    ``update_stats`` is false, folds them into the running averages with
    ``bn_momentum``, defaulting to the architecture's); ``mode='eval'`` uses
    the running statistics only.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    arch, p = net.arch, net.params
    x = as_batch(batch, arch, net.dtype)
    train = mode == "train"
    momentum = arch.bn_momentum if bn_momentum is None else bn_momentum
    if train and x.shape[0] < 2:
        raise ValueError("train-mode forward needs a batch of at least 2 samples")
    cache = ForwardCache(inputs=x, train=train, length=x.shape[2])
    h = np.ascontiguousarray(x.transpose(0, 2, 1))
    for b in range(arch.n_blocks):
        block_in = h
        for j in range(len(arch.kernels)):
            pre = f"blocks.{b}"
            h, conv_c = conv1d_forward(h, p[f"{pre}.conv{j}.weight"], p[f"{pre}.conv{j}.bias"])
            cache.conv_lengths.append(h.shape[1])
            rm = net.buffers[f"{pre}.bn{j}.running_mean"]
            rv = net.buffers[f"{pre}.bn{j}.running_var"]
            if train and not update_stats:
                rm, rv = rm.copy(), rv.copy()
            h, bn_c = batchnorm_forward(
                h, p[f"{pre}.bn{j}.gamma"], p[f"{pre}.bn{j}.beta"], rm, rv,
                arch.bn_eps, momentum, train,
            )
            mask = h > 0
            h = h * mask
            cache.layers[(b, j)] = (conv_c, bn_c, mask)
        if f"blocks.{b}.proj.weight" in p:
            skip, proj_c = conv1d_forward(block_in, p[f"blocks.{b}.proj.weight"], p[f"blocks.{b}.proj.bias"])
            cache.layers[(b, "proj")] = proj_c
            cache.conv_lengths.append(skip.shape[1])
        else:
            skip = block_in
        h = h + skip
    pooled = h.mean(axis=1)
    logits = pooled @ p["head.weight"].T + p["head.bias"]
    probs = softmax(logits)
    cache.pooled = pooled
    cache.probs = probs
    return probs, cache


def loss(probs: np.ndarray, labels, class_weights=(1.0, 1.0, 1.0)) -> float:
    """Class-weighted cross-entropy, averaged over the batch size.

    True-class probabilities are clipped at 1e-12 before the log.
    """
    probs = np.asarray(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.shape[0] == 0 or probs.shape[0] != labels.shape[0]:
        raise ValueError(f"need equal, non-empty probs and labels, got {probs.shape[0]} and {labels.shape[0]}")
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    p_true = probs[np.arange(labels.size), labels].astype(np.float64)
    return float(np.sum(w * -np.log(np.maximum(p_true, LOG_CLIP))) / labels.size)


def n_clipped(probs: np.ndarray, labels) -> int:
    labels = np.asarray(labels, dtype=np.int64)
    return int(np.sum(probs[np.arange(labels.size), labels] < LOG_CLIP))


def backward(net: Network, cache: ForwardCache, batch, labels, class_weights=(1.0, 1.0, 1.0)) -> dict[str, np.ndarray]:
    """Gradients of ``loss`` w.r.t. every parameter, keyed like ``net.params``."""
    if not cache.train:
        raise CacheMismatchError("backward needs a cache from a train-mode forward")
    x = as_batch(batch, net.arch, net.dtype)
    if x.shape != cache.inputs.shape or not np.array_equal(x, cache.inputs):
        raise CacheMismatchError("cache was produced by a different batch")
    arch, p = net.arch, net.params
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.size
    if n != x.shape[0]:
        raise ValueError(f"{n} labels for a batch of {x.shape[0]}")
    w = np.asarray(class_weights, dtype=net.dtype)[labels]
    onehot = np.zeros_like(cache.probs)
    onehot[np.arange(n), labels] = 1
    dlogits = (cache.probs - onehot) * (w / n)[:, None]

    grads: dict[str, np.ndarray] = {}
    grads["head.weight"] = dlogits.T @ cache.pooled
    grads["head.bias"] = dlogits.sum(axis=0)
    dpooled = dlogits @ p["head.weight"]
    dh = np.broadcast_to(dpooled[:, None, :] / cache.length, (n, cache.length, dpooled.shape[1]))

    for b in reversed(range(arch.n_blocks)):
        pre = f"blocks.{b}"
        dskip = dh
        if (b, "proj") in cache.layers:
            dskip, gw, gb = conv1d_backward(dh, p[f"{pre}.proj.weight"], cache.layers[(b, "proj")])
            grads[f"{pre}.proj.weight"] = gw
            grads[f"{pre}.proj.bias"] = gb
        for j in reversed(range(len(arch.kernels))):
            conv_c, bn_c, mask = cache.layers[(b, j)]
            dh = dh * mask
            dh, grads[f"{pre}.bn{j}.gamma"], grads[f"{pre}.bn{j}.beta"] = batchnorm_backward(
                dh, p[f"{pre}.bn{j}.gamma"], bn_c
            )
            dh, grads[f"{pre}.conv{j}.weight"], grads[f"{pre}.conv{j}.bias"] = conv1d_backward(
                dh, p[f"{pre}.conv{j}.weight"], conv_c
            )
        dh = dh + dskip
    return {k: grads[k] for k in p}


def predict(net: Network, window: np.ndarray) -> ClassProbs:
    probs, _ = forward(net, np.asarray(window)[None], "eval")
    return ClassProbs(*(float(v) for v in probs[0]))


def predict_batch(net: Network, windows, batch_size: int = 256) -> np.ndarray:
    """Eval-mode probabilities for many windows, in chunks."""
    windows = np.asarray(windows)
    out = np.empty((len(windows), net.arch.n_classes), dtype=np.float64)
    for start in range(0, len(windows), batch_size):
        probs, _ = forward(net, windows[start : start + batch_size], "eval")
        out[start : start + batch_size] = probs
    return out


def conv_output_lengths(net: Network, batch) -> list[int]:
    """Time length after every conv layer, in forward order."""
    _, cache = forward(net, batch, "eval")
    return list(cache.conv_lengths)
