"""Mini-batch SGD, evaluation and input gradients."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..confusion import ConfusionMatrix
from ..datasets import Dataset
from ..errors import ShapeError, TrainingDiverged
from ..rng import RandomStream
from .network import Network

log = logging.getLogger(__name__)


@dataclass
class Hyper:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 0.01
    momentum: float = 0.9
    seed: int = 0


@dataclass
class History:
    loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        rows = ["epoch,loss,accuracy"]
        rows += [f"{i + 1},{l:.6f},{a:.6f}" for i, (l, a) in enumerate(zip(self.loss, self.accuracy))]
        return "\n".join(rows) + "\n"


def _check_dataset(net: Network, data: Dataset) -> None:
    if len(data) == 0:
        raise ShapeError("dataset is empty")
    if tuple(data.shape) != tuple(net.input_shape):
        raise ShapeError(f"dataset images {data.shape} do not match network input {net.input_shape}")
    if data.labels.max() >= net.num_classes:
        raise ShapeError("dataset labels exceed the network's class count")


def train(net: Network, train_set: Dataset, hyper: Hyper | None = None, callback=None):
    """Minimise cross-entropy with momentum SGD.

    The input network is left untouched; a trained copy is returned together
    with per-epoch mean loss and running (pre-update) training accuracy.
    """
    hyper = hyper or Hyper()
    _check_dataset(net, train_set)
    net = net.copy()
    params = net.parameters()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    lr = net.dtype.type(hyper.learning_rate)
    mu = net.dtype.type(hyper.momentum)
    history = History()
    n = len(train_set)
    for epoch in range(hyper.epochs):
        order = RandomStream(hyper.seed, epoch).generator().permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            x = train_set.images[idx]
            y = train_set.labels[idx]
            loss, grads, _, logits = net.backprop(x, y)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} in epoch {epoch + 1}")
            for k, p in params.items():
                v = velocity[k]
                v *= mu
                v -= lr * grads[k].astype(p.dtype, copy=False)
                p += v
            total_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y).sum())
            if callback is not None:
                callback(epoch, start, loss)
        history.loss.append(total_loss / n)
        history.accuracy.append(correct / n)
        log.info("epoch %d: loss %.4f acc %.4f", epoch + 1, history.loss[-1], history.accuracy[-1])
    return net, history


def evaluate(net: Network, test_set: Dataset, batch_size: int = 512):
    """Accuracy and confusion matrix; predictions are argmax with ties to the lowest index."""
    _check_dataset(net, test_set)
    pred = net.predict(test_set.images, batch_size)
    cm = ConfusionMatrix.from_predictions(test_set.labels, pred, net.num_classes)
    return cm.accuracy, cm


def input_gradient(net: Network, dataset: Dataset, group_by_label: bool = True,
                   batch_size: int = 256) -> np.ndarray:
    """Mean of d(cross-entropy)/d(input) per ground-truth class, shape (K, C, H, W).

    With ``group_by_label=False`` a single (1, C, H, W) mean over the whole
    dataset is returned.
    """
    _check_dataset(net, dataset)
    k = net.num_classes if group_by_label else 1
    sums = np.zeros((k,) + tuple(net.input_shape), dtype=np.float64)
    counts = np.zeros(k, dtype=np.int64)
    for s in range(0, len(dataset), batch_size):
        x = dataset.images[s:s + batch_size]
        y = dataset.labels[s:s + batch_size]
        _, _, dx = net.loss_and_grads(x, y, need_input_grad=True)
        # the loss is a batch mean; undo the 1/n to get per-sample gradients
        dx = dx.astype(np.float64) * len(y)
        groups = y if group_by_label else np.zeros_like(y)
        np.add.at(sums, groups, dx)
        np.add.at(counts, groups, 1)
    return sums / np.maximum(counts, 1)[:, None, None, None]
