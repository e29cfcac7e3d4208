"""Model container, forward / backward passes and the cross-entropy loss."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, List, Sequence, Tuple

import numpy as np

from hspi.engine.backend import EmulatedBackend, ReferenceBackend
from hspi.engine.layers import Layer, Shape
from hspi.errors import HspiError, ShapeError

if TYPE_CHECKING:
    from hspi.platform import PlatformProfile


class Model:
    """An ordered stack of layers.  Logits are the raw output of the last layer."""

    def __init__(self, input_shape: Sequence[int], layers: Sequence[Layer]) -> None:
        self.input_shape: Shape = tuple(int(d) for d in input_shape)
        self.layers: Tuple[Layer, ...] = tuple(layers)
        if not self.layers:
            raise ShapeError("bad-model", "a model needs at least one layer")
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if len(shape) != 1:
            raise ShapeError("bad-model", f"final layer must emit a vector of logits, got shape {shape}")
        self.num_classes = shape[0]

    def parameters(self) -> List[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def with_parameters(self, params: Sequence[np.ndarray]) -> "Model":
        it = iter(params)
        layers = [layer.with_params([next(it) for _ in layer.params()]) for layer in self.layers]
        return Model(self.input_shape, layers)

    def rounded_to_fp32(self) -> "Model":
        return self.with_parameters([p.astype(np.float32).astype(np.float64) for p in self.parameters()])

    def __repr__(self) -> str:
        return f"Model({self.input_shape} → {self.num_classes}: {', '.join(map(repr, self.layers))})"


@dataclass
class Tape:
    """Activations recorded by a forward pass, one cache list per batch group."""

    input_shape: Shape | None = None
    chunks: List[Tuple[slice, List[Any]]] = field(default_factory=list)


@dataclass
class Gradient:
    d_input: np.ndarray
    d_params: List[np.ndarray] | None = None


def _check_input(model: Model, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != len(model.input_shape) + 1 or x.shape[1:] != model.input_shape or x.shape[0] < 1:
        raise ShapeError("shape-mismatch", f"expected (B≥1, {', '.join(map(str, model.input_shape))}), got {x.shape}")
    return x


def forward(model: Model, x: np.ndarray, profile: PlatformProfile | None = None, tape: Tape | None = None) -> np.ndarray:
    """Logits ``[batch, num_classes]``.

    ``profile=None`` is the exact float64 reference.  Under a profile the batch
    is processed in groups of ``profile.batch_group`` samples, in order.
    """
    x = _check_input(model, x)
    if profile is None:
        backend, group = ReferenceBackend(), x.shape[0]
    else:
        backend, group = EmulatedBackend(profile), profile.batch_group
    if tape is not None:
        tape.input_shape = x.shape
        tape.chunks = []
    outputs = []
    for start in range(0, x.shape[0], group):
        sl = slice(start, min(start + group, x.shape[0]))
        h = x[sl]
        caches = []
        for layer in model.layers:
            h, cache = layer.forward(h, backend)
            caches.append(cache)
        outputs.append(h)
        if tape is not None:
            tape.chunks.append((sl, caches))
    return np.concatenate(outputs, axis=0)


def backward(model: Model, x: np.ndarray, loss_grad: np.ndarray, tape: Tape | None) -> Gradient:
    """Gradient of the loss w.r.t. the input (and parameters) from a recorded forward pass."""
    if tape is None or tape.input_shape is None:
        raise HspiError("not-recorded", "backward needs a forward pass recorded on a Tape")
    x = np.asarray(x)
    if x.shape != tape.input_shape:
        raise ShapeError("shape-mismatch", f"tape recorded {tape.input_shape}, got {x.shape}")
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != (x.shape[0], model.num_classes):
        raise ShapeError("shape-mismatch", f"loss gradient {loss_grad.shape} vs logits ({x.shape[0]}, {model.num_classes})")

    d_input = np.zeros(x.shape)
    d_params = [np.zeros_like(p) for p in model.parameters()]
    for sl, caches in tape.chunks:
        dy = loss_grad[sl]
        grads: List[np.ndarray] = []
        for layer, cache in zip(reversed(model.layers), reversed(caches)):
            dy, g = layer.backward(dy, cache)
            grads = g + grads
        d_input[sl] = dy
        for acc, g in zip(d_params, grads):
            acc += g
    return Gradient(d_input, d_params)


# ═══════════════════════════════════════════════════════════════
# Loss
# ═══════════════════════════════════════════════════════════════

def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: int | np.ndarray) -> Tuple[np.ndarray | float, np.ndarray]:
    """``−log softmax(logits)[label]`` and its gradient w.r.t. the logits.

    Accepts one logit vector with an int label, or a batch with a label vector.
    """
    z = np.asarray(logits, dtype=np.float64)
    single = z.ndim == 1
    z2 = z[None, :] if single else z
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape != (z2.shape[0],) or (y < 0).any() or (y >= z2.shape[1]).any():
        raise ShapeError("bad-label", f"labels {labels!r} for logits of shape {z.shape}")
    shifted = z2 - z2.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(z2.shape[0])
    loss = log_norm - shifted[rows, y]
    grad = softmax(z2)
    grad[rows, y] -= 1.0
    if single:
        return float(loss[0]), grad[0]
    return loss, grad
