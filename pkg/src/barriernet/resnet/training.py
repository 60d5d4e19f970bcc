"""Mini-batch training with Adam or plain SGD."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..labeling import class_weights_from_labels
from .network import Architecture, Network, argmax_high, backward, forward, init_network, loss, n_clipped

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    class_weights: tuple[float, float, float] | None = None
    dtype: str = "float32"
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    recalibrate_bn: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (batch norm needs batch statistics)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be 'float32' or 'float64', got {self.dtype!r}")
        if self.class_weights is not None:
            if len(self.class_weights) != 3 or min(self.class_weights) <= 0:
                raise ValueError("class_weights must be three positive numbers")
            self.class_weights = tuple(float(w) for w in self.class_weights)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(params[k].dtype)


class SGD:
    def __init__(self, params: dict[str, np.ndarray], lr: float, momentum: float = 0.0):
        self.lr, self.momentum = lr, momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        for k, g in grads.items():
            if self.momentum:
                vel = self.velocity[k]
                vel *= self.momentum
                vel += g
                g = vel
            params[k] -= (self.lr * g).astype(params[k].dtype)


def batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches. A trailing singleton is folded into the previous batch."""
    order = rng.permutation(n)
    out = [order[i : i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) == 1:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def dataset_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    """Windows and labels from a sample list or an ``(X, y)`` pair."""
    if isinstance(dataset, tuple):
        x, y = dataset
        return np.asarray(x), np.asarray(y, dtype=np.int64)
    samples = list(dataset)
    if not samples:
        raise ValueError("empty dataset")
    if any(s.window is None for s in samples):
        raise ValueError("samples were built without feature windows")
    return np.stack([s.window for s in samples]), np.array([s.label for s in samples], dtype=np.int64)


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float
    clipped: int = 0


def train(
    dataset,
    cfg: TrainConfig = TrainConfig(),
    arch: Architecture | None = None,
    net: Network | None = None,
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> tuple[Network, list[EpochStats]]:
    """Train from scratch (or continue ``net``).

    Loss and accuracy in the history are running train-mode values over each
    epoch's batches. Everything random (init, shuffles) derives from
    ``cfg.seed``.
    """
    x, y = dataset_arrays(dataset)
    if len(y) < 2:
        raise ValueError("need at least two training samples")
    present = np.unique(y)
    if present.size == 1:
        warnings.warn(f"training set holds a single class ({present[0]})", stacklevel=2)
    dtype = np.dtype(cfg.dtype)
    x = x.astype(dtype, copy=False)
    init_seq, shuffle_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    if net is None:
        arch = arch or Architecture(window=x.shape[2])
        net = init_network(arch, np.random.default_rng(init_seq), dtype=dtype)
    else:
        net = net.astype(dtype)
    weights = np.array(cfg.class_weights if cfg.class_weights is not None else class_weights_from_labels(y))
    logger.info("class weights %s", np.round(weights, 4).tolist())
    if cfg.optimizer == "adam":
        opt = Adam(net.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    else:
        opt = SGD(net.params, cfg.learning_rate, cfg.momentum)
    rng = np.random.default_rng(shuffle_seq)

    history: list[EpochStats] = []
    for epoch in range(1, cfg.epochs + 1):
        total_loss = 0.0
        correct = 0
        clipped = 0
        for idx in batches(len(y), cfg.batch_size, rng):
            xb, yb = x[idx], y[idx]
            probs, cache = forward(net, xb, "train")
            total_loss += loss(probs, yb, weights) * len(idx)
            correct += int(np.sum(argmax_high(probs) == yb))
            clipped += n_clipped(probs, yb)
            grads = backward(net, cache, xb, yb, weights)
            opt.step(net.params, grads)
        stats = EpochStats(epoch, total_loss / len(y), correct / len(y), clipped)
        if clipped:
            logger.warning("epoch %d: %d true-class probabilities clipped at 1e-12", epoch, clipped)
        logger.info("epoch %d loss %.5f acc %.4f", epoch, stats.loss, stats.accuracy)
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    if cfg.recalibrate_bn:
        recalibrate_batchnorm(net, x, cfg.batch_size)
    return net, history


def recalibrate_batchnorm(net: Network, x: np.ndarray, batch_size: int) -> None:
    """Replace running BN statistics with the plain average of batch statistics
    over ``x`` under the final weights.

    The exponential running average lags behind weights that moved during the
    last epochs; eval-mode predictions use these statistics.
    """
    starts = list(range(0, len(x), batch_size))
    if len(starts) > 1 and len(x) - starts[-1] == 1:
        starts.pop()
    for k, start in enumerate(starts, start=1):
        stop = starts[k] if k < len(starts) else len(x)
        forward(net, x[start:stop], "train", bn_momentum=1.0 / k)


def write_history(history: list[EpochStats], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "accuracy"])
        for h in history:
            w.writerow([h.epoch, repr(h.loss), repr(h.accuracy)])
