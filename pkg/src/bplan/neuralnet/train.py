"""Minibatch training loop with seeded shuffling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import make_rng
from .layers import loss as loss_fn
from .network import AdamConfig, adam_step


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 170
    loss: str = "mse"
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def adam(self):
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.eps)


def _features(net, X, E, stop, batch=64):
    if stop == 0:
        return X
    return np.concatenate([net.forward(X[i:i + batch], None, False, None, 0, stop)
                           for i in range(0, len(X), batch)])


def evaluate(net, X, E, Y, kind="mse", start=0, batch=64):
    """Sample-weighted loss (and accuracy for classification) in inference mode."""
    if len(X) == 0:
        return float("nan"), float("nan")
    total, correct = 0.0, 0
    for i in range(0, len(X), batch):
        sl = slice(i, i + batch)
        out = net.forward(X[sl], None if E is None else E[sl], False, None, start)
        val, _ = loss_fn(out, Y[sl], kind)
        total += val * len(out)
        if kind != "mse":
            correct += int(np.sum(out.argmax(axis=1) == Y[sl]))
    return total / len(X), correct / len(X)


def train(net, train_set, test_set=None, config=TrainConfig(), epochs_done_callback=None):
    """Train in place; returns per-epoch history.

    ``train_set``/``test_set`` are ``(grids, endpoints_or_None, targets)``.
    History index 0 holds the losses before the first update.  ``train`` and
    ``test`` are inference-mode evaluations; ``batch`` is the mean minibatch
    loss seen by the optimiser (dropout active).
    """
    X, E, Y = train_set
    prefix = net.frozen_prefix()
    # frozen leading layers are a fixed feature map: evaluate them once
    F = _features(net, X, E, prefix)
    Ft = None
    if test_set is not None and len(test_set[0]):
        Ft = _features(net, test_set[0], test_set[1], prefix)
    rng = make_rng(config.seed, 0x7A)
    history = {"train": [], "test": [], "batch": [], "train_acc": [], "test_acc": []}

    def record(batch_loss):
        tr, tr_acc = evaluate(net, F, E, Y, config.loss, prefix)
        history["train"].append(tr)
        history["train_acc"].append(tr_acc)
        if Ft is not None:
            te, te_acc = evaluate(net, Ft, test_set[1], test_set[2], config.loss, prefix)
        else:
            te, te_acc = float("nan"), float("nan")
        history["test"].append(te)
        history["test_acc"].append(te_acc)
        history["batch"].append(batch_loss)

    record(float("nan"))
    n = len(F)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        seen, acc = 0, 0.0
        for i in range(0, n, config.batch_size):
            idx = order[i:i + config.batch_size]
            out = net.forward(F[idx], None if E is None else E[idx], True, rng, prefix)
            val, grad = loss_fn(out, Y[idx], config.loss)
            net.backward(grad, prefix)
            adam_step(net, config.adam)
            acc += val * len(idx)
            seen += len(idx)
        record(acc / seen)
        if epochs_done_callback is not None:
            epochs_done_callback(epoch + 1, history)
    return history


def epochs_to_threshold(history, fraction=0.2):
    """First epoch whose train loss is <= ``fraction`` of the initial loss (None if never)."""
    target = fraction * history["train"][0]
    for epoch, value in enumerate(history["train"]):
        if value <= target:
            return epoch
    return None
