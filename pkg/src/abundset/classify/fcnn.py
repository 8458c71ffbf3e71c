"""Fully connected classifier head, optionally trained jointly with the aggregator."""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict

import numpy as np

from ..aggregate import Aggregator, Sample
from ..errors import ConfigError, DimensionError
from ..numerics import (ParamStore, Tape, Tensor, adam_step, backward, cross_entropy,
                        matmul, relu, stack)
from .model import TrainedModel, check_labels

log = logging.getLogger(__name__)


@dataclass
class FcnnConfig:
    hidden_dim: int = 128
    epochs: int = 10
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0
    joint_training: bool = True
    dtype: str = "float32"

    def validate(self) -> "FcnnConfig":
        if self.epochs < 1:
            raise ConfigError("epochs", "must be >= 1")
        if self.hidden_dim < 1:
            raise ConfigError("hidden_dim", "must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if not self.lr > 0:
            raise ConfigError("lr", "must be > 0")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype", "must be float32 or float64")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def head_params(in_dim: int, hidden_dim: int, n_classes: int, seed: int, dtype) -> ParamStore:
    store = ParamStore(seed, dtype)
    store.weight("head.fc1.w", (in_dim, hidden_dim))
    store.bias("head.fc1.b", (hidden_dim,))
    store.weight("head.fc2.w", (hidden_dim, n_classes))
    store.bias("head.fc2.b", (n_classes,))
    return store


def head_logits(x: Tensor, params: ParamStore) -> Tensor:
    h = relu(matmul(x, params["head.fc1.w"]) + params["head.fc1.b"])
    return matmul(h, params["head.fc2.w"]) + params["head.fc2.b"]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class _Inputs:
    """Uniform access to a training set given either raw embeddings or Samples."""

    def __init__(self, train, aggregator: Aggregator | None, joint: bool, dtype):
        self.dtype = dtype
        self.aggregator = aggregator
        self.samples = None
        if isinstance(train, np.ndarray) or (len(train) and not isinstance(train[0], Sample)):
            self.fixed = np.asarray(train, dtype=dtype)
            if self.fixed.ndim != 2:
                raise DimensionError("embedding matrix must be 2-D")
        elif aggregator is None:
            raise ConfigError("strategy", "training on Samples needs an aggregator")
        elif joint and aggregator.trainable:
            self.fixed = None
            self.samples = list(train)
        else:
            self.fixed = aggregator.embed_all(train).astype(dtype)

    @property
    def joint(self) -> bool:
        return self.fixed is None

    def __len__(self):
        return len(self.samples) if self.joint else len(self.fixed)

    @property
    def dim(self) -> int:
        return self.aggregator.output_dim if self.joint else self.fixed.shape[1]

    def batch(self, idx) -> Tensor:
        if self.joint:
            return stack([self.aggregator.tensor(self.samples[i]) for i in idx])
        return Tensor(self.fixed[idx])


def _mean_loss(inputs: _Inputs, labels: np.ndarray, params: ParamStore, batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(inputs), batch_size):
        idx = np.arange(start, min(start + batch_size, len(inputs)))
        total += cross_entropy(head_logits(inputs.batch(idx), params), labels[idx]).item() * len(idx)
    return total / len(inputs)


def fcnn_train(train, labels, config: FcnnConfig | None = None,
               aggregator: Aggregator | None = None, n_classes: int | None = None) -> TrainedModel:
    """Minimize mean cross-entropy with Adam over shuffled mini-batches.

    ``train`` is an embedding matrix or a list of Samples. With Samples, a
    transformer aggregator and ``joint_training`` the aggregator parameters
    are updated too. ``model.history`` holds the full-set loss at
    initialization followed by one value per epoch.
    """
    config = (config or FcnnConfig()).validate()
    labels = np.asarray(labels, dtype=np.int64)
    n_classes = check_labels(labels, n_classes)
    dtype = np.dtype(config.dtype)
    inputs = _Inputs(train, aggregator, config.joint_training, dtype)
    if len(inputs) != len(labels):
        raise DimensionError(f"{len(inputs)} training inputs vs {len(labels)} labels")

    head = head_params(inputs.dim, config.hidden_dim, n_classes, config.seed, dtype)
    if inputs.joint:
        # aggregator parameters are created on first use; materialize them before merging
        aggregator.tensor(inputs.samples[0])
    store = head.merged(aggregator.params) if inputs.joint else head
    rng = np.random.default_rng([config.seed, 0x5EED])

    history = [_mean_loss(inputs, labels, head, config.batch_size)]
    for epoch in range(config.epochs):
        order = rng.permutation(len(inputs))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            store.zero_grad()
            with Tape() as tape:
                loss = cross_entropy(head_logits(inputs.batch(idx), head), labels[idx])
            backward(loss, tape, store)
            adam_step(store, lr=config.lr)
        history.append(_mean_loss(inputs, labels, head, config.batch_size))
        log.debug("epoch %d loss %.5f", epoch + 1, history[-1])

    return TrainedModel(kind="fcnn", aggregator=aggregator, n_classes=n_classes,
                        fcnn_config=config, head=head, history=history)


def fcnn_predict_proba(model: TrainedModel, inputs) -> np.ndarray:
    """Class probabilities for a batch of Samples or an embedding matrix."""
    x = _embed_for_model(model, inputs, model.head.dtype)
    if x.shape[1] != model.head["head.fc1.w"].shape[0]:
        raise DimensionError(f"expected {model.head['head.fc1.w'].shape[0]}-dim input, got {x.shape[1]}")
    return softmax(head_logits(Tensor(x), model.head).data.astype(np.float64))


def fcnn_predict(model: TrainedModel, x) -> tuple[int, np.ndarray]:
    """Label and probabilities for one Sample or embedding vector."""
    batch = [x] if isinstance(x, Sample) else np.atleast_2d(np.asarray(x))
    probs = fcnn_predict_proba(model, batch)[0]
    return int(np.argmax(probs)), probs


def _embed_for_model(model: TrainedModel, inputs, dtype) -> np.ndarray:
    if len(inputs) and isinstance(inputs[0], Sample):
        if model.aggregator is None:
            raise ConfigError("strategy", "model was trained on raw embeddings")
        return model.aggregator.embed_all(inputs).astype(dtype)
    x = np.asarray(inputs, dtype=dtype)
    if x.ndim != 2:
        raise DimensionError("embedding matrix must be 2-D")
    return x
