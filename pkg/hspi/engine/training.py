"""Model zoo and deterministic float64 Adam training (weights stored as FP32)."""

from __future__ import annotations

import logging
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, PositiveInt

from hspi.config import parse_options
from hspi.datasets import Dataset
from hspi.engine.layers import AvgPool2d, Conv2d, Flatten, Linear, MaxPool2d, ReLU
from hspi.engine.model import Model, Tape, backward, cross_entropy, forward
from hspi.errors import TrainingDiverged, UsageError
from hspi.seeding import substream

logger = logging.getLogger(__name__)


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["mlp", "cnn"] = "cnn"
    width: PositiveInt = 8       # conv channels of the first block
    hidden: PositiveInt = 32     # MLP hidden units


def parse_model_config(text: str) -> ModelConfig:
    """``cnn`` / ``cnn:width=8`` / ``mlp:hidden=64``."""
    kind, _, opts = text.strip().partition(":")
    try:
        return ModelConfig(kind=kind, **{k: int(v) for k, v in parse_options(opts).items()})
    except (ValueError, TypeError) as exc:
        raise UsageError("bad-model-config", f"{text!r}: {exc}") from exc


def _he(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def build_model(cfg: ModelConfig, input_shape: tuple[int, ...], num_classes: int, rng: np.random.Generator) -> Model:
    c, h, w = input_shape
    if cfg.kind == "mlp":
        d = c * h * w
        return Model(input_shape, [
            Flatten(),
            Linear(_he(rng, (cfg.hidden, d), d), np.zeros(cfg.hidden)),
            ReLU(),
            Linear(_he(rng, (num_classes, cfg.hidden), cfg.hidden), np.zeros(num_classes)),
        ])

    a, b = cfg.width, 2 * cfg.width
    if h < 4 or w < 4:
        raise UsageError("bad-model-config", f"cnn needs at least 4x4 inputs, got {input_shape}")
    flat = b * (h // 4) * (w // 4)
    return Model(input_shape, [
        Conv2d(_he(rng, (a, c, 3, 3), c * 9), np.zeros(a), 1, 1), ReLU(),
        Conv2d(_he(rng, (a, a, 3, 3), a * 9), np.zeros(a), 1, 1), ReLU(),
        MaxPool2d(2),
        Conv2d(_he(rng, (b, a, 3, 3), a * 9), np.zeros(b), 1, 1), ReLU(),
        Conv2d(_he(rng, (b, b, 3, 3), b * 9), np.zeros(b), 1, 1), ReLU(),
        AvgPool2d(2),
        Flatten(),
        Linear(_he(rng, (num_classes, flat), flat), np.zeros(num_classes)),
    ])


def accuracy(model: Model, dataset: Dataset, profile=None, batch: int = 256) -> float:
    x = dataset.inputs()
    preds = np.concatenate([forward(model, x[i:i + batch], profile).argmax(axis=1)
                            for i in range(0, len(x), batch)])
    return float((preds == dataset.labels).mean())


DEFAULT_LR = 3e-3


class Adam:
    """Adam over a list of float64 arrays, updated in place."""

    def __init__(self, params: list[np.ndarray], lr: float, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8) -> None:
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train_reference(
    cfg: ModelConfig,
    dataset: Dataset,
    epochs: int = 12,
    lr: float = DEFAULT_LR,
    seed: int = 0,
    batch_size: int = 32,
) -> Model:
    """Seeded minibatch Adam in float64; returns FP32-rounded weights."""
    if epochs < 1 or lr <= 0 or batch_size < 1:
        raise UsageError("bad-training-config", f"epochs={epochs} lr={lr} batch_size={batch_size}")
    model = build_model(cfg, dataset.input_shape, dataset.num_classes, substream(seed, "train/init"))
    order_rng = substream(seed, "train/order")
    params = model.parameters()
    optimizer = Adam(params, lr)
    x_all, y_all = dataset.inputs(), dataset.labels

    for epoch in range(1, epochs + 1):
        perm = order_rng.permutation(len(dataset))
        total = 0.0
        for start in range(0, len(perm), batch_size):
            idx = perm[start:start + batch_size]
            tape = Tape()
            logits = forward(model, x_all[idx], None, tape)
            loss, grad = cross_entropy(logits, y_all[idx])
            if not np.isfinite(loss).all():
                raise TrainingDiverged(seed, epoch)
            total += float(loss.sum())
            g = backward(model, x_all[idx], grad / len(idx), tape)
            optimizer.step(g.d_params or [])
        logger.info("epoch %d/%d  loss=%.4f", epoch, epochs, total / len(dataset))

    model = model.rounded_to_fp32()
    logger.info("Trained %s on %s: train accuracy %.3f", cfg.kind, dataset.name, accuracy(model, dataset))
    return model
