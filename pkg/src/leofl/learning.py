"""Multinomial logistic regression and the worker SGD procedure.

Parameters are a flat vector holding the ``dim x classes`` weight matrix in
row-major order followed by the ``classes`` biases (7850 entries for MNIST).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class ParamVector:
    values: np.ndarray
    source_epoch: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("parameter vector must be one-dimensional")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter vector contains non-finite entries")

    def __len__(self) -> int:
        return self.values.size

    def copy(self, source_epoch: int | None = None) -> "ParamVector":
        tag = self.source_epoch if source_epoch is None else source_epoch
        return ParamVector(self.values.copy(), tag)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    prox_weight: float = 0.0
    batch_size: int = 10
    local_epochs: int = 1
    rng_seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0 or not math.isfinite(self.learning_rate):
            raise ValueError("learning rate must be finite and non-negative")
        if self.prox_weight < 0:
            raise ValueError("proximal weight must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.local_epochs < 0:
            raise ValueError("local epochs must be >= 0")


def param_count(dim: int, classes: int) -> int:
    return dim * classes + classes


def zeros(dim: int, classes: int) -> ParamVector:
    return ParamVector(np.zeros(param_count(dim, classes)), 0)


def _as_array(params) -> np.ndarray:
    return params.values if isinstance(params, ParamVector) else np.asarray(params, dtype=float)


def _split(theta: np.ndarray, dim: int, classes: int):
    if theta.size != param_count(dim, classes):
        raise ValueError(
            f"parameter dimension {theta.size} does not match model ({dim} features, {classes} classes)"
        )
    return theta[: dim * classes].reshape(dim, classes), theta[dim * classes:]


def logits(params, features: np.ndarray, classes: int) -> np.ndarray:
    theta = _as_array(params)
    W, b = _split(theta, features.shape[1], classes)
    return features @ W + b


def predict_proba(params, features: np.ndarray, classes: int) -> np.ndarray:
    z = logits(params, features, classes)
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def model_loss(params, batch: Dataset) -> float:
    """Mean softmax cross-entropy over ``batch``."""
    logp = _log_softmax(logits(params, batch.features, batch.class_count))
    return float(-logp[np.arange(len(batch)), batch.labels].mean())


def _data_gradient(theta: np.ndarray, X: np.ndarray, y: np.ndarray, classes: int) -> np.ndarray:
    W, b = _split(theta, X.shape[1], classes)
    z = X @ W + b
    z -= z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(len(y)), y] -= 1.0
    p /= len(y)
    return np.concatenate([(X.T @ p).ravel(), p.sum(axis=0)])


def surrogate_gradient(params, anchor, batch: Dataset, prox_weight: float) -> np.ndarray:
    """Gradient of the batch loss plus ``prox_weight / 2 * ||theta - anchor||^2``."""
    theta = _as_array(params)
    ref = _as_array(anchor)
    if ref.shape != theta.shape:
        raise ValueError("anchor and parameters differ in dimension")
    grad = _data_gradient(theta, batch.features, batch.labels, batch.class_count)
    if prox_weight:
        grad = grad + prox_weight * (theta - ref)
    return grad


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffle ``range(n)`` and cut it into ceil(n / batch_size) batches; the last may be short."""
    order = rng.permutation(n)
    return [order[s:s + batch_size] for s in range(0, n, batch_size)]


def local_train(
    received: ParamVector,
    epoch_tag: int,
    data: Dataset,
    cfg: TrainConfig,
    rng: np.random.Generator | None = None,
) -> ParamVector:
    """Run minibatch SGD on ``data`` starting from ``received``.

    The received model is the proximal anchor for every step. The result is
    tagged with ``epoch_tag``, the epoch of the model it was computed from.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    anchor = _as_array(received)
    theta = anchor.copy()
    _split(theta, data.dim, data.class_count)
    X, y, C = data.features, data.labels, data.class_count
    eta, lam = cfg.learning_rate, cfg.prox_weight

    for _ in range(cfg.local_epochs):
        for idx in minibatches(len(data), cfg.batch_size, rng):
            grad = _data_gradient(theta, X[idx], y[idx], C)
            if lam:
                grad += lam * (theta - anchor)
            theta -= eta * grad
        if not np.all(np.isfinite(theta)):
            raise TrainingDivergedError("local training produced non-finite parameters")
    return ParamVector(theta, epoch_tag)


def evaluate(params, test: Dataset) -> tuple[float, float]:
    """Top-1 accuracy and mean cross-entropy; argmax ties go to the lowest class index."""
    z = logits(params, test.features, test.class_count)
    pred = np.argmax(z, axis=1)
    accuracy = float(np.mean(pred == test.labels))
    logp = _log_softmax(z)
    loss = float(-logp[np.arange(len(test)), test.labels].mean())
    return accuracy, loss


def train_centralized(train: Dataset, cfg: TrainConfig, epochs: int, seed: int = 0) -> ParamVector:
    """Reference model: plain SGD on the pooled training set from zero initialization."""
    run_cfg = TrainConfig(cfg.learning_rate, 0.0, cfg.batch_size, epochs, seed)
    return local_train(zeros(train.dim, train.class_count), 0, train, run_cfg)
