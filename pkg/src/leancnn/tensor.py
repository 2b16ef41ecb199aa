"""Dense tensor helpers and forward kernels.

Tensors are plain ``numpy.ndarray`` values in channels-last layout
(``H, W, C`` per sample, ``B, H, W, C`` for batches). Every kernel accepts a
single sample or a leading batch axis and never mutates its inputs.

The convolution accumulates over ``(kh, kw, c_in)`` in a fixed order with
separate multiply and add steps, so in float64 it reproduces a naive nested
loop bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

DEFAULT_DTYPE = np.float32
Padding = Literal["same", "valid"]


class ShapeError(ValueError):
    """Raised when tensor dimensions disagree.

    ``dim`` names the offending dimension, ``expected`` and ``got`` carry the
    conflicting sizes.
    """

    def __init__(self, message: str, dim: str | None = None, expected=None, got=None):
        super().__init__(message)
        self.dim = dim
        self.expected = expected
        self.got = got


def as_tensor(values, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Copy ``values`` into a contiguous array and check the tensor invariants."""
    arr = np.ascontiguousarray(np.array(values, dtype=dtype))
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if any(d < 1 for d in arr.shape):
        raise ShapeError(f"all dimensions must be >= 1, got {arr.shape}", dim="shape", got=arr.shape)
    return arr


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{what} contains non-finite values")


@dataclass(frozen=True)
class ConvGeometry:
    height: int
    width: int
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: Padding = "same"

    def __post_init__(self):
        for field in ("height", "width", "in_channels", "out_channels", "kernel", "stride"):
            if getattr(self, field) < 1:
                raise ShapeError(f"{field} must be >= 1", dim=field, got=getattr(self, field))
        if self.padding not in ("same", "valid"):
            raise ValueError(f"unknown padding {self.padding!r}")
        self.output_hw()

    def output_hw(self) -> tuple[int, int]:
        return (
            output_dim(self.height, self.kernel, self.stride, self.padding, "height"),
            output_dim(self.width, self.kernel, self.stride, self.padding, "width"),
        )


def output_dim(size: int, kernel: int, stride: int, padding: str, name: str = "dim") -> int:
    """Spatial output size; ``same`` rounds up, ``valid`` floors."""
    if padding == "same":
        return -(-size // stride)
    out = (size - kernel) // stride + 1
    if size < kernel or out < 1:
        raise ShapeError(
            f"{name}: window {kernel} does not fit input size {size}", dim=name, expected=kernel, got=size
        )
    return out


def same_padding(size: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return total // 2, total - total // 2


def _batched(x: np.ndarray, rank: int) -> tuple[np.ndarray, bool]:
    if x.ndim == rank:
        return x[None], True
    if x.ndim == rank + 1:
        return x, False
    raise ShapeError(f"expected rank {rank} or {rank + 1}, got shape {x.shape}", dim="rank", got=x.ndim)


def pad_input(x: np.ndarray, kernel: int, stride: int, padding: str, fill: float = 0.0):
    """Pad a batched (B,H,W,C) tensor for ``same`` padding; returns (padded, (top, left))."""
    if padding == "valid":
        return x, (0, 0)
    top, bottom = same_padding(x.shape[1], kernel, stride)
    left, right = same_padding(x.shape[2], kernel, stride)
    if top == bottom == left == right == 0:
        return x, (0, 0)
    padded = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)), constant_values=fill)
    return padded, (top, left)


def conv2d_forward(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: Padding = "same",
) -> np.ndarray:
    """2-D cross-correlation, channels-last.

    ``x`` is (H, W, C_in) or (B, H, W, C_in); ``kernel`` is (K, K, C_in, C_out).
    Output value = sum(window * kernel) + bias.
    """
    xb, single = _batched(np.asarray(x), 3)
    if kernel.ndim != 4 or kernel.shape[0] != kernel.shape[1]:
        raise ShapeError(f"kernel must be (K, K, C_in, C_out), got {kernel.shape}", dim="kernel", got=kernel.shape)
    k, _, c_in, c_out = kernel.shape
    if xb.shape[3] != c_in:
        raise ShapeError(
            f"input channels {xb.shape[3]} != kernel C_in {c_in}", dim="C_in", expected=c_in, got=xb.shape[3]
        )
    if bias.shape != (c_out,):
        raise ShapeError(f"bias must be ({c_out},), got {bias.shape}", dim="C_out", expected=c_out, got=bias.shape)
    ho = output_dim(xb.shape[1], k, stride, padding, "height")
    wo = output_dim(xb.shape[2], k, stride, padding, "width")
    xp, _ = pad_input(xb, k, stride, padding)
    dtype = np.result_type(xb.dtype, kernel.dtype)
    out = np.zeros((xb.shape[0], ho, wo, c_out), dtype=dtype)
    h_span = (ho - 1) * stride + 1
    w_span = (wo - 1) * stride + 1
    for i in range(k):
        for j in range(k):
            window = xp[:, i : i + h_span : stride, j : j + w_span : stride, :]
            for c in range(c_in):
                out += window[..., c : c + 1] * kernel[i, j, c]
    out += bias
    return out[0] if single else out


def maxpool2d_forward(x: np.ndarray, window: int = 2, stride: int = 2, padding: Padding = "valid"):
    """Max pooling; trailing rows/cols that do not fill a window are dropped.

    Returns ``(output, argmax)`` where ``argmax`` holds the flat in-window
    index (row * window + col) of each winner.
    """
    xb, single = _batched(np.asarray(x), 3)
    ho = output_dim(xb.shape[1], window, stride, padding, "height")
    wo = output_dim(xb.shape[2], window, stride, padding, "width")
    xp, _ = pad_input(xb, window, stride, padding, fill=-np.inf)
    h_span = (ho - 1) * stride + 1
    w_span = (wo - 1) * stride + 1
    stacked = np.stack(
        [
            xp[:, i : i + h_span : stride, j : j + w_span : stride, :]
            for i in range(window)
            for j in range(window)
        ]
    )
    arg = np.argmax(stacked, axis=0)
    out = np.take_along_axis(stacked, arg[None], axis=0)[0]
    if single:
        return out[0], arg[0]
    return out, arg


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """``out_j = sum_i x_i * w_ij + b_j`` for (n_in,) or (B, n_in) input."""
    x = np.asarray(x)
    if weights.ndim != 2:
        raise ShapeError(f"weights must be 2-D, got {weights.shape}", dim="weights", got=weights.shape)
    if x.shape[-1] != weights.shape[0]:
        raise ShapeError(
            f"input size {x.shape[-1]} != weights n_in {weights.shape[0]}",
            dim="n_in",
            expected=weights.shape[0],
            got=x.shape[-1],
        )
    if bias.shape != (weights.shape[1],):
        raise ShapeError(
            f"bias must be ({weights.shape[1]},), got {bias.shape}", dim="n_out", expected=weights.shape[1], got=bias.shape
        )
    return x @ weights + bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0).astype(np.asarray(x).dtype, copy=False)


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax along ``axis`` (max-subtracted)."""
    logits = np.asarray(logits)
    if logits.shape[axis] < 2:
        raise ShapeError("softmax needs at least 2 classes", dim="k", got=logits.shape[axis])
    _check_finite(logits, "logits")
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    # keep strictly inside (0, 1) for extreme logit gaps
    tiny = np.finfo(p.dtype).tiny
    return np.clip(p, tiny, np.nextafter(p.dtype.type(1), p.dtype.type(0)))


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    xb, single = _batched(np.asarray(x), 3)
    out = xb.mean(axis=(1, 2))
    return out[0] if single else out
