"""One-vs-rest linear SVM trained with the Pegasos subgradient schedule.

Each class gets a hinge-loss separator over standardized features with a
constant bias feature appended.  After every step the weights are
projected onto the ball of radius 1/sqrt(λ).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from hspi.errors import ShapeError, UsageError
from hspi.logits import FeatureDataset, FeatureMode
from hspi.metrics import MetricsReport, report_metrics
from hspi.seeding import substream

logger = logging.getLogger(__name__)


@dataclass
class SvmModel:
    weights: np.ndarray              # (C, D)
    biases: np.ndarray               # (C,)
    mean: np.ndarray                 # (D,)
    scale: np.ndarray                # (D,)
    class_names: List[str]
    feature_mode: FeatureMode = "split"
    set_size: int = 10
    lam: float = 1e-3
    epochs: int = 200
    seed: int = 0
    probe_seed: int | None = None
    probe_shape: Tuple[int, ...] | None = None
    training: MetricsReport | None = field(default=None, compare=False)

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1]

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.scale


def _standardization(features: np.ndarray, mode: FeatureMode) -> Tuple[np.ndarray, np.ndarray]:
    if mode == "split-raw":
        return np.zeros(features.shape[1]), np.ones(features.shape[1])
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def svm_train(dataset: FeatureDataset, lam: float = 1e-3, epochs: int = 200, seed: int = 0) -> SvmModel:
    x_raw, y = dataset.features, dataset.labels
    classes = len(dataset.class_names)
    present = np.unique(y)
    if len(present) < 2:
        raise UsageError("single-class", "SVM training needs samples from at least two classes")
    if len(present) != classes:
        missing = sorted(set(range(classes)) - set(present.tolist()))
        raise UsageError("empty-class", f"no samples for classes {[dataset.class_names[i] for i in missing]}")
    if lam <= 0 or epochs < 1:
        raise UsageError("bad-svm-config", f"lambda={lam} epochs={epochs}")

    mean, scale = _standardization(x_raw, dataset.mode)
    x = np.hstack([(x_raw - mean) / scale, np.ones((len(x_raw), 1))])
    targets = np.where(y[:, None] == np.arange(classes)[None, :], 1.0, -1.0)   # (N, C)
    w = np.zeros((classes, x.shape[1]))
    radius = 1.0 / np.sqrt(lam)
    rng = substream(seed, "svm/order")

    t = 0
    for _ in range(epochs):
        for i in rng.permutation(len(x)):
            t += 1
            eta = 1.0 / (lam * t)
            margins = targets[i] * (w @ x[i])
            w *= 1.0 - eta * lam
            violated = margins < 1.0
            if violated.any():
                w += eta * (violated * targets[i])[:, None] * x[i][None, :]
            norms = np.linalg.norm(w, axis=1, keepdims=True)
            w *= np.minimum(1.0, radius / np.maximum(norms, 1e-300))

    model = SvmModel(
        weights=w[:, :-1].copy(),
        biases=w[:, -1].copy(),
        mean=mean,
        scale=scale,
        class_names=list(dataset.class_names),
        feature_mode=dataset.mode,
        set_size=dataset.set_size,
        lam=lam,
        epochs=epochs,
        seed=seed,
    )
    pred, _ = svm_predict(model, x_raw)
    model.training = report_metrics(pred, y, model.class_names)
    logger.info("SVM trained on %d samples x %d features, %d classes: training accuracy %.3f",
                len(x), x_raw.shape[1], classes, model.training.accuracy)
    return model


def svm_predict(model: SvmModel, features: np.ndarray):
    """Class index and score vector; a 2-D input gives arrays of both.

    Scores are ``W · standardize(f) + b``.  A feature row that standardizes to
    zero therefore scores exactly the biases and predicts the largest one: the
    all-zero row in ``split-raw`` mode (no standardization), the training mean
    in ``split`` and ``bits`` modes.
    """
    f = np.asarray(features, dtype=np.float64)
    single = f.ndim == 1
    f2 = f[None, :] if single else f
    if f2.ndim != 2 or f2.shape[1] != model.feature_dim:
        raise ShapeError("dimension-mismatch", f"features of dim {f2.shape[-1]}, model expects {model.feature_dim}")
    scores = model.standardize(f2) @ model.weights.T + model.biases
    pred = np.argmax(scores, axis=1).astype(np.int64)
    if single:
        return int(pred[0]), scores[0]
    return pred, scores
