"""Compute backends used by the layers.

ReferenceBackend is plain float64 numpy (training, gradient checks).
EmulatedBackend runs every contraction through ``hspi.numerics`` under a
PlatformProfile: operands are quantized, products and partial sums are
rounded to the accumulator format in the profile's order, outputs are
rounded back to the element format.
"""

from __future__ import annotations

from typing import TYPE_CHECKING, Protocol

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hspi.errors import ShapeError
from hspi.numerics import SEQUENTIAL, AccumOrder, FormatSpec, quantize_array, quantize_tensor, reduce_array

if TYPE_CHECKING:
    from hspi.platform import PlatformProfile

# Split-K chunks used by a GEMM kernel at batch group 1; halves as the group doubles.
SPLIT_K_BUDGET = 4

# Upper bound on materialized products per contraction chunk.
_MAX_PRODUCTS = 1 << 22


def split_k(batch_group: int) -> int:
    return max(1, SPLIT_K_BUDGET // batch_group)


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """(B, C, H, W) → (B, Ho*Wo, C*kh*kw), columns ordered (c, kh, kw)."""
    b, c, h, w = x.shape
    if h + 2 * pad < kh or w + 2 * pad < kw or stride < 1:
        raise ShapeError("conv-geometry", f"kernel {kh}x{kw} stride {stride} pad {pad} on {h}x{w}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, ho * wo, c * kh * kw)


def col2im(dcols: np.ndarray, x_shape: tuple[int, ...], kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    b, c, h, w = x_shape
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    d = dcols.reshape(b, ho, wo, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    dxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += d[:, :, i, j]
    return dxp[:, :, pad:pad + h, pad:pad + w]


def pool_windows(x: np.ndarray, k: int) -> np.ndarray:
    """(B, C, H, W) → (B, C, H//k, W//k, k*k); trailing rows/cols that do not fill a window are dropped."""
    b, c, h, w = x.shape
    ho, wo = h // k, w // k
    if ho == 0 or wo == 0:
        raise ShapeError("pool-geometry", f"pool {k} on {h}x{w}")
    v = x[:, :, :ho * k, :wo * k].reshape(b, c, ho, k, wo, k)
    return v.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, k * k)


class Backend(Protocol):
    def linear(self, x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray: ...

    def conv2d(self, x: np.ndarray, weight: np.ndarray, bias: np.ndarray, stride: int, pad: int) -> np.ndarray: ...

    def avg_pool(self, x: np.ndarray, k: int) -> np.ndarray: ...


class ReferenceBackend:
    def linear(self, x, weight, bias):
        return x @ weight.T + bias

    def conv2d(self, x, weight, bias, stride, pad):
        o, _, kh, kw = weight.shape
        cols = im2col(x, kh, kw, stride, pad)
        b, h, w = x.shape[0], x.shape[2], x.shape[3]
        ho = (h + 2 * pad - kh) // stride + 1
        wo = (w + 2 * pad - kw) // stride + 1
        y = cols @ weight.reshape(o, -1).T + bias
        return y.transpose(0, 2, 1).reshape(b, o, ho, wo)

    def avg_pool(self, x, k):
        return pool_windows(x, k).mean(axis=-1)


class EmulatedBackend:
    def __init__(self, profile: PlatformProfile) -> None:
        self.profile = profile
        self.accum: FormatSpec = profile.accum_format
        self.splits = split_k(profile.batch_group)

    # ── element / accumulator rounding ───────────────────────
    def _operand(self, t: np.ndarray) -> np.ndarray:
        return quantize_tensor(t, self.profile.format)

    def _output(self, t: np.ndarray) -> np.ndarray:
        fmt = self.profile.format
        return quantize_array(t, fmt) if isinstance(fmt, FormatSpec) else t

    def _contract(self, a: np.ndarray, w: np.ndarray, accumulate_in: FormatSpec | None,
                  order: AccumOrder | None = None, splits: int | None = None) -> np.ndarray:
        """(N, K) × (O, K) → (N, O); ``accumulate_in=None`` sums exactly (integer accumulators).

        ``order`` and ``splits`` default to the profile's GEMM grouping.
        """
        n, k = a.shape
        o = w.shape[0]
        fmt = accumulate_in or self.accum
        order = order or self.profile.accum_order
        splits = self.splits if splits is None else splits
        out = np.empty((n, o))
        step = max(1, _MAX_PRODUCTS // max(1, o * k))
        for start in range(0, n, step):
            stop = min(n, start + step)
            products = a[start:stop, None, :] * w[None, :, :]
            if accumulate_in is None:
                out[start:stop] = products.sum(axis=-1)
            else:
                products = quantize_array(products, fmt)
                out[start:stop] = reduce_array(products, order, fmt, splits)
        return quantize_array(out, self.accum)

    def _direct_accumulator(self) -> FormatSpec | None:
        fmt = self.profile.format
        return fmt if isinstance(fmt, FormatSpec) else None

    # ── ops ──────────────────────────────────────────────────
    def linear(self, x, weight, bias):
        y = self._contract(self._operand(x), self._operand(weight), self.accum)
        return self._output(quantize_array(y + self._output(bias), self.accum))

    def conv2d(self, x, weight, bias, stride, pad):
        if self.profile.conv_kernel == "direct":
            return conv2d_direct(x, weight, bias, stride, pad, self)
        return conv2d_gemm(x, weight, bias, stride, pad, self)

    def avg_pool(self, x, k):
        win = pool_windows(x, k)
        s = reduce_array(win, self.profile.accum_order, self.accum, 1)
        return self._output(quantize_array(s / (k * k), self.accum))


def _conv2d(x, weight, bias, stride, pad, backend: EmulatedBackend, accumulate_in,
            order: AccumOrder | None = None, splits: int | None = None) -> np.ndarray:
    o, c, kh, kw = weight.shape
    if x.ndim != 4 or x.shape[1] != c:
        raise ShapeError("conv-geometry", f"input {x.shape} vs weight {weight.shape}")
    b, h, w = x.shape[0], x.shape[2], x.shape[3]
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    cols = backend._operand(im2col(x, kh, kw, stride, pad))
    wq = backend._operand(weight.reshape(o, -1))
    y = backend._contract(cols.reshape(b * ho * wo, -1), wq, accumulate_in, order, splits)
    y = quantize_array(y + backend._output(bias), backend.accum)
    return backend._output(y).reshape(b, ho * wo, o).transpose(0, 2, 1).reshape(b, o, ho, wo)


def conv2d_gemm(x, weight, bias, stride, pad, backend: EmulatedBackend) -> np.ndarray:
    """im2col, then a GEMM in the profile's accumulation order with split-K, accumulating in ``accum_format``."""
    return _conv2d(x, weight, bias, stride, pad, backend, backend.accum)


def conv2d_direct(x, weight, bias, stride, pad, backend: EmulatedBackend) -> np.ndarray:
    """Per output element, one sequential walk over (c, kh, kw) accumulating in the element type.

    No split-K and no blocking: the profile's accum order and batch group do not apply.
    """
    return _conv2d(x, weight, bias, stride, pad, backend, backend._direct_accumulator(), SEQUENTIAL, 1)
