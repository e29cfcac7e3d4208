"""Layers with a forward pass over a Backend and a manual float64 backward pass.

Each ``forward`` returns ``(output, cache)``; ``backward(dy, cache)`` returns
``(dx, param_grads)`` with ``param_grads`` aligned with ``params()``.
Quantizers are treated as identity in the backward pass.
"""

from __future__ import annotations

from typing import Any, ClassVar, List, Tuple

import numpy as np

from hspi.engine.backend import Backend, col2im, im2col, pool_windows
from hspi.errors import ShapeError

Shape = Tuple[int, ...]


class Layer:
    tag: ClassVar[int]

    def params(self) -> List[np.ndarray]:
        return []

    def output_shape(self, in_shape: Shape) -> Shape:
        return in_shape

    def forward(self, x: np.ndarray, backend: Backend) -> Tuple[np.ndarray, Any]:
        raise NotImplementedError

    def backward(self, dy: np.ndarray, cache: Any) -> Tuple[np.ndarray, List[np.ndarray]]:
        raise NotImplementedError

    def with_params(self, params: List[np.ndarray]) -> "Layer":
        return self

    def __repr__(self) -> str:
        return type(self).__name__


class Linear(Layer):
    tag = 1

    def __init__(self, weight: np.ndarray, bias: np.ndarray) -> None:
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ShapeError("bad-layer", f"Linear weight {self.weight.shape} / bias {self.bias.shape}")

    def params(self):
        return [self.weight, self.bias]

    def output_shape(self, in_shape):
        if in_shape != (self.weight.shape[1],):
            raise ShapeError("shape-mismatch", f"Linear expects ({self.weight.shape[1]},), got {in_shape}")
        return (self.weight.shape[0],)

    def forward(self, x, backend):
        return backend.linear(x, self.weight, self.bias), x

    def backward(self, dy, x):
        return dy @ self.weight, [dy.T @ x, dy.sum(axis=0)]

    def with_params(self, params):
        return Linear(*params)

    def __repr__(self):
        return f"Linear({self.weight.shape[1]}→{self.weight.shape[0]})"


class Conv2d(Layer):
    tag = 2

    def __init__(self, weight: np.ndarray, bias: np.ndarray, stride: int = 1, pad: int = 0) -> None:
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.stride = int(stride)
        self.pad = int(pad)
        if self.weight.ndim != 4 or self.bias.shape != (self.weight.shape[0],) or self.stride < 1 or self.pad < 0:
            raise ShapeError("bad-layer", f"Conv2d weight {self.weight.shape} stride {stride} pad {pad}")

    def params(self):
        return [self.weight, self.bias]

    def output_shape(self, in_shape):
        o, c, kh, kw = self.weight.shape
        if len(in_shape) != 3 or in_shape[0] != c:
            raise ShapeError("shape-mismatch", f"Conv2d expects ({c}, H, W), got {in_shape}")
        h = (in_shape[1] + 2 * self.pad - kh) // self.stride + 1
        w = (in_shape[2] + 2 * self.pad - kw) // self.stride + 1
        if h < 1 or w < 1:
            raise ShapeError("conv-geometry", f"kernel {kh}x{kw} does not fit {in_shape}")
        return (o, h, w)

    def forward(self, x, backend):
        return backend.conv2d(x, self.weight, self.bias, self.stride, self.pad), x

    def backward(self, dy, x):
        o, c, kh, kw = self.weight.shape
        b = dy.shape[0]
        dy_cols = dy.reshape(b, o, -1).transpose(0, 2, 1)              # (B, P, O)
        cols = im2col(x, kh, kw, self.stride, self.pad)                 # (B, P, CKK)
        d_weight = np.einsum("bpo,bpk->ok", dy_cols, cols).reshape(self.weight.shape)
        d_bias = dy_cols.sum(axis=(0, 1))
        dcols = dy_cols @ self.weight.reshape(o, -1)
        return col2im(dcols, x.shape, kh, kw, self.stride, self.pad), [d_weight, d_bias]

    def with_params(self, params):
        return Conv2d(params[0], params[1], self.stride, self.pad)

    def __repr__(self):
        o, c, kh, kw = self.weight.shape
        return f"Conv2d({c}→{o}, {kh}x{kw}, stride={self.stride}, pad={self.pad})"


class ReLU(Layer):
    tag = 3

    def forward(self, x, backend):
        y = np.maximum(x, 0.0)
        return y, y > 0

    def backward(self, dy, mask):
        return dy * mask, []


class MaxPool2d(Layer):
    tag = 4

    def __init__(self, k: int) -> None:
        self.k = int(k)

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[1] < self.k or in_shape[2] < self.k:
            raise ShapeError("pool-geometry", f"pool {self.k} on {in_shape}")
        return (in_shape[0], in_shape[1] // self.k, in_shape[2] // self.k)

    def forward(self, x, backend):
        win = pool_windows(x, self.k)
        idx = win.argmax(axis=-1)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0], (x.shape, idx)

    def backward(self, dy, cache):
        shape, idx = cache
        k = self.k
        b, c, ho, wo = dy.shape
        dwin = np.zeros((b, c, ho, wo, k * k))
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx = np.zeros(shape)
        dx[:, :, :ho * k, :wo * k] = dwin.reshape(b, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho * k, wo * k)
        return dx, []

    def __repr__(self):
        return f"MaxPool2d({self.k})"


class AvgPool2d(MaxPool2d):
    tag = 5

    def forward(self, x, backend):
        return backend.avg_pool(x, self.k), x.shape

    def backward(self, dy, shape):
        k = self.k
        b, c, ho, wo = dy.shape
        dx = np.zeros(shape)
        dx[:, :, :ho * k, :wo * k] = np.repeat(np.repeat(dy, k, axis=2), k, axis=3) / (k * k)
        return dx, []

    def __repr__(self):
        return f"AvgPool2d({self.k})"


class Flatten(Layer):
    tag = 6

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, backend):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, dy, shape):
        return dy.reshape(shape), []


LAYER_TYPES = {cls.tag: cls for cls in (Linear, Conv2d, ReLU, MaxPool2d, AvgPool2d, Flatten)}
