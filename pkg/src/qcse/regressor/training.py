"""Weighted-MSE loss, backprop driver and Nesterov momentum SGD."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .network import Network

log = logging.getLogger(__name__)


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    momentum: float = 0.5
    nesterov: bool = True
    lr_main: float = 1e-5
    epochs_main: int = 60
    lr_refine: float = 1e-6
    epochs_refine: int = 3

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if min(self.lr_main, self.lr_refine) < 0 or min(self.epochs_main, self.epochs_refine) < 0:
            raise ValueError("learning rates and epoch counts must be non-negative")

    def schedule(self):
        return [self.lr_main] * self.epochs_main + [self.lr_refine] * self.epochs_refine


def weighted_mse(pred, target, weights=None) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    err = pred - np.asarray(target, dtype=np.float64)
    w = np.ones_like(err) if weights is None else np.asarray(weights, dtype=np.float64)
    return float(np.mean(w * err * err))


def total_loss(net: Network, pred, target, weights=None) -> float:
    """Weighted MSE plus the L2 penalty on convolution kernels."""
    return weighted_mse(pred, target, weights) + net.l2_penalty()


def loss_and_grads(net: Network, X, target, weights=None, train: bool = True):
    """Forward + backward on one batch; returns ``(total_loss, data_loss)``.

    Gradients land in each layer's ``grads`` dict. ``train=False`` backpropagates
    through the inference-mode network (running batch-norm statistics, no dropout).
    """
    pred = net.forward(X, train=train, keep=True)
    target = np.asarray(target, dtype=np.float64)
    w = np.ones(target.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    data = weighted_mse(pred, target, w)
    dpred = 2.0 * w * (pred.astype(np.float64) - target) / target.shape[0]
    net.backward(dpred)
    return data + net.l2_penalty(), data


class NesterovSGD:
    """``v <- m v - lr g``;  ``w <- w + m v - lr g`` (plain momentum without Nesterov)."""

    def __init__(self, momentum: float = 0.5, nesterov: bool = True):
        self.momentum = momentum
        self.nesterov = nesterov
        self.velocity: dict[str, np.ndarray] = {}

    def step(self, net: Network, lr: float) -> None:
        m = self.momentum
        for name, layer, key in net.trainable_items():
            g = layer.grads[key]
            p = layer.params[key]
            v = self.velocity.get(name)
            if v is None:
                v = np.zeros_like(p)
            v = (m * v - lr * g).astype(p.dtype)
            self.velocity[name] = v
            if self.nesterov:
                p += (m * v - lr * g).astype(p.dtype)
            else:
                p += v


def train(net: Network, X, target, weights=None, config: TrainConfig | None = None,
          seed: int = 0, callback=None) -> list[float]:
    """Train ``net`` in place; returns the weighted MSE of every epoch.

    Each epoch's value is the batch-size-weighted mean of the training-mode
    batch losses (data term only). Shuffling and dropout draw from ``seed``.
    """
    config = config or TrainConfig()
    X = np.asarray(X)
    target = np.asarray(target, dtype=np.float64)
    n = target.shape[0]
    if n == 0 or X.shape[0] != n:
        raise ValueError("training set is empty or features/targets disagree in length")
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)

    rng = np.random.default_rng([int(seed), 1])
    net.set_dropout_seed(seed)
    opt = NesterovSGD(config.momentum, config.nesterov)
    history = []
    for epoch, lr in enumerate(config.schedule()):
        order = rng.permutation(n)
        acc = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            # overflow shows up as a non-finite loss below; no need for numpy warnings
            with np.errstate(over="ignore", invalid="ignore"):
                _, data = loss_and_grads(net, X[idx], target[idx], w[idx], train=True)
                if not np.isfinite(data):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch} (lr={lr})")
                acc += data * idx.shape[0]
                opt.step(net, lr)
        history.append(acc / n)
        log.debug("epoch %d lr %g weighted mse %.4f", epoch, lr, history[-1])
        if callback is not None:
            callback(epoch, history[-1])
    return history
