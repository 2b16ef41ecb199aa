"""Batched forward pass with a recorded tape, and reverse-mode backward.

``forward`` evaluates the network layer by layer and records, per leaf
layer, exactly what its vector-Jacobian product needs. ``backward`` walks
that tape in reverse, accumulating parameter gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .arch import ArchitectureSpec, LayerSpec, ResidualBlockSpec, expand_block
from .params import ParameterSet
from .tensor import (
    DEFAULT_DTYPE,
    ShapeError,
    conv2d_forward,
    dense_forward,
    maxpool2d_forward,
    pad_input,
    relu,
    softmax,
)

Mode = Literal["train", "infer"]
Gradients = dict  # layer name -> {"weights": ndarray, "bias": ndarray}


class StaleCacheError(RuntimeError):
    pass


@dataclass
class _Node:
    name: str
    layer: LayerSpec
    saved: dict = field(default_factory=dict)


@dataclass
class Cache:
    """Activation tape produced by :func:`forward`."""

    spec: ArchitectureSpec
    params: ParameterSet
    tape: list
    logits: np.ndarray | None = None
    bn_updates: dict = field(default_factory=dict)
    used: bool = False


def params_dtype(params: ParameterSet):
    for lp in params.values():
        return lp.weights.dtype
    return np.dtype(DEFAULT_DTYPE)


def _activate(kind: str, z: np.ndarray, saved: dict) -> np.ndarray:
    if kind == "relu":
        y = relu(z)
        saved["act_mask"] = z > 0
        return y
    if kind == "softmax":
        saved["logits"] = z
        y = softmax(z, axis=-1)
        saved["probs"] = y
        return y
    return z


def _activation_vjp(kind: str, g: np.ndarray, saved: dict) -> np.ndarray:
    if kind == "relu":
        return g * saved["act_mask"]
    if kind == "softmax":
        p = saved["probs"]
        return p * (g - np.sum(g * p, axis=-1, keepdims=True))
    return g


def _dropout_mask(shape, rate: float, seed: int, index: int, dtype) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / dtype.type(1.0 - rate)


class _Runner:
    def __init__(self, params: ParameterSet, mode: Mode, seed: int):
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be train or infer, got {mode!r}")
        self.params = params
        self.mode = mode
        self.seed = seed
        self.counter = 0
        self.bn_updates: dict = {}

    def run(self, layers, x, tape: list) -> np.ndarray:
        for layer in layers:
            x = self.layer(layer, x, tape)
        return x

    def layer(self, layer: LayerSpec, x: np.ndarray, tape: list) -> np.ndarray:
        self.counter += 1
        kind = layer.kind
        node = _Node(layer.name, layer)
        s = node.saved
        if kind == "input":
            y = x
        elif kind == "conv2d":
            p = self.params[layer.name]
            s["x"] = x
            z = conv2d_forward(x, p.weights, p.bias, layer["stride"], layer["padding"])
            y = _activate(layer.activation, z, s)
        elif kind == "dense":
            p = self.params[layer.name]
            s["x"] = x
            z = dense_forward(x, p.weights, p.bias)
            y = _activate(layer.activation, z, s)
        elif kind == "maxpool2d":
            y, arg = maxpool2d_forward(x, layer["window"], layer["stride"], layer["padding"])
            s["arg"] = arg
            s["in_shape"] = x.shape
        elif kind == "flatten":
            s["in_shape"] = x.shape
            y = x.reshape(x.shape[0], -1)
        elif kind == "dropout":
            if self.mode == "train" and layer["rate"] > 0:
                mask = _dropout_mask(x.shape, layer["rate"], self.seed, self.counter, x.dtype)
                s["mask"] = mask
                y = x * mask
            else:
                y = x
        elif kind == "relu":
            y = _activate("relu", x, s)
        elif kind == "softmax":
            y = _activate("softmax", x, s)
        elif kind == "global_avg_pool":
            s["in_shape"] = x.shape
            y = x.mean(axis=(1, 2))
        elif kind == "batchnorm":
            y = self._batchnorm(layer, x, s)
        elif kind == "residual_block":
            block = expand_block(layer, x.shape[1:])
            y = self.block(block, x, s)
        else:  # pragma: no cover - LayerSpec validates kinds
            raise ValueError(kind)
        tape.append(node)
        return y

    def _batchnorm(self, layer: LayerSpec, x: np.ndarray, s: dict) -> np.ndarray:
        p = self.params[layer.name]
        eps = layer["epsilon"]
        axes = tuple(range(x.ndim - 1))
        if self.mode == "train":
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = layer["momentum"]
            self.bn_updates[layer.name] = (
                (m * p.aux["moving_mean"] + (1 - m) * mean).astype(p.weights.dtype),
                (m * p.aux["moving_var"] + (1 - m) * var).astype(p.weights.dtype),
            )
        else:
            mean, var = p.aux["moving_mean"], p.aux["moving_var"]
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean) * inv_std
        s.update(xhat=xhat, inv_std=inv_std, batch_stats=self.mode == "train")
        return (xhat * p.weights + p.bias).astype(x.dtype, copy=False)

    def block(self, block: ResidualBlockSpec, x: np.ndarray, s: dict) -> np.ndarray:
        inner_tape: list = []
        short_tape: list = []
        f = self.run(block.inner, x, inner_tape)
        skip = self.run(block.shortcut, x, short_tape)
        if f.shape != skip.shape:
            raise ShapeError(f"{block.name}: residual branches disagree {f.shape} vs {skip.shape}", dim="branch")
        s.update(inner=inner_tape, shortcut=short_tape, block=block)
        return _activate(block.activation, f + skip, s)


def forward(
    spec: ArchitectureSpec,
    params: ParameterSet,
    batch: np.ndarray,
    mode: Mode = "infer",
    seed: int = 0,
) -> tuple[np.ndarray, Cache]:
    """Run ``batch`` (B, *input_shape) through the network.

    Returns the final layer output (class probabilities for a softmax head)
    and the tape for :func:`backward`. Dropout masks in train mode depend
    only on ``seed`` and the layer position.
    """
    x = np.asarray(batch)
    if x.shape[1:] != tuple(spec.input_shape):
        raise ShapeError(
            f"batch shape {x.shape[1:]} does not match input {spec.input_shape}",
            dim="input",
            expected=spec.input_shape,
            got=x.shape[1:],
        )
    x = x.astype(params_dtype(params), copy=False)
    runner = _Runner(params, mode, seed)
    tape: list = []
    out = runner.run(spec.layers, x, tape)
    last = tape[-1].saved
    logits = last.get("logits")
    return out, Cache(spec, params, tape, logits, runner.bn_updates)


def residual_block_forward(
    x: np.ndarray, block: ResidualBlockSpec, params: ParameterSet, mode: Mode = "infer"
) -> np.ndarray:
    """``act(F(x) + shortcut(x))`` for a single block; x is (H,W,C) or (B,H,W,C)."""
    x = np.asarray(x)
    single = x.ndim == 3
    xb = x[None] if single else x
    y = _Runner(params, mode, 0).block(block, xb, {})
    return y[0] if single else y


class _Backward:
    def __init__(self, params: ParameterSet):
        self.params = params
        self.grads: Gradients = {}

    def run(self, tape: list, g: np.ndarray, skip_last_softmax: bool = False) -> np.ndarray:
        for i in range(len(tape) - 1, -1, -1):
            g = self.node(tape[i], g, skip_softmax=skip_last_softmax and i == len(tape) - 1)
        return g

    def _store(self, name: str, **slots):
        self.grads[name] = slots

    def node(self, node: _Node, g: np.ndarray, skip_softmax: bool = False) -> np.ndarray:
        layer, s = node.layer, node.saved
        kind = layer.kind
        if kind in ("conv2d", "dense", "relu", "softmax", "residual_block"):
            act = layer.activation if kind in ("conv2d", "dense") else kind
            if kind == "residual_block":
                act = s["block"].activation
            if not (skip_softmax and act == "softmax"):
                g = _activation_vjp(act, g, s)
        if kind == "conv2d":
            return self._conv(node, g)
        if kind == "dense":
            p = self.params[node.name]
            x = s["x"]
            if p.trainable:
                self._store(node.name, weights=x.T @ g, bias=g.sum(axis=0))
            return g @ p.weights.T
        if kind == "maxpool2d":
            return self._maxpool(node, g)
        if kind == "flatten":
            return g.reshape(s["in_shape"])
        if kind == "dropout":
            return g * s["mask"] if "mask" in s else g
        if kind == "global_avg_pool":
            b, h, w, c = s["in_shape"]
            return np.broadcast_to(g[:, None, None, :] / (h * w), s["in_shape"]).copy()
        if kind == "batchnorm":
            return self._batchnorm(node, g)
        if kind == "residual_block":
            gx = self.run(s["inner"], g)
            gs = self.run(s["shortcut"], g) if s["shortcut"] else g
            return gx + gs
        return g  # input, relu, softmax (activation already applied)

    def _conv(self, node: _Node, g: np.ndarray) -> np.ndarray:
        layer, s = node.layer, node.saved
        p = self.params[node.name]
        x = s["x"]
        k, stride = layer["kernel"], layer["stride"]
        xp, (top, left) = pad_input(x, k, stride, layer["padding"])
        b, ho, wo, _ = g.shape
        h_span = (ho - 1) * stride + 1
        w_span = (wo - 1) * stride + 1
        dxp = np.zeros_like(xp)
        dw = np.zeros_like(p.weights) if p.trainable else None
        for i in range(k):
            for j in range(k):
                sl = (slice(None), slice(i, i + h_span, stride), slice(j, j + w_span, stride), slice(None))
                if dw is not None:
                    dw[i, j] = np.tensordot(xp[sl], g, axes=([0, 1, 2], [0, 1, 2]))
                dxp[sl] += g @ p.weights[i, j].T
        if dw is not None:
            self._store(node.name, weights=dw, bias=g.sum(axis=(0, 1, 2)))
        h, w = x.shape[1], x.shape[2]
        return dxp[:, top : top + h, left : left + w, :]

    def _maxpool(self, node: _Node, g: np.ndarray) -> np.ndarray:
        layer, s = node.layer, node.saved
        window, stride = layer["window"], layer["stride"]
        in_shape = s["in_shape"]
        dummy = np.zeros(in_shape, dtype=g.dtype)
        dxp, (top, left) = pad_input(dummy, window, stride, layer["padding"])
        dxp = np.zeros_like(dxp)
        _, ho, wo, _ = g.shape
        h_span = (ho - 1) * stride + 1
        w_span = (wo - 1) * stride + 1
        arg = s["arg"]
        for i in range(window):
            for j in range(window):
                sl = (slice(None), slice(i, i + h_span, stride), slice(j, j + w_span, stride), slice(None))
                dxp[sl] += np.where(arg == i * window + j, g, 0)
        return dxp[:, top : top + in_shape[1], left : left + in_shape[2], :]

    def _batchnorm(self, node: _Node, g: np.ndarray) -> np.ndarray:
        s = node.saved
        p = self.params[node.name]
        xhat, inv_std = s["xhat"], s["inv_std"]
        axes = tuple(range(g.ndim - 1))
        if p.trainable:
            self._store(node.name, weights=np.sum(g * xhat, axis=axes), bias=g.sum(axis=axes))
        dxhat = g * p.weights
        if not s["batch_stats"]:
            return dxhat * inv_std
        n = int(np.prod([g.shape[a] for a in axes]))
        return (inv_std / n) * (
            n * dxhat - dxhat.sum(axis=axes) - xhat * np.sum(dxhat * xhat, axis=axes)
        )


def backward(
    spec: ArchitectureSpec,
    params: ParameterSet,
    cache: Cache,
    grad_output: np.ndarray,
    wrt: Literal["output", "logits"] = "output",
    return_input_grad: bool = False,
):
    """Gradients of a scalar loss with respect to every trainable parameter.

    ``grad_output`` is dL/d(output) or, with ``wrt="logits"``, dL/d(logits)
    of a final softmax (the fused softmax + cross-entropy path). Frozen
    layers get no entry. A cache may be consumed once and only with the
    spec and parameter set that produced it.
    """
    if cache.used:
        raise StaleCacheError("cache already consumed by a backward pass")
    if cache.spec is not spec and cache.spec != spec:
        raise StaleCacheError("cache was produced for a different architecture")
    if cache.params is not params:
        raise StaleCacheError("cache was produced with a different parameter set")
    if wrt == "logits" and cache.logits is None:
        raise ValueError("wrt='logits' requires a final softmax layer")
    cache.used = True
    bw = _Backward(params)
    g = np.asarray(grad_output, dtype=params_dtype(params))
    gx = bw.run(cache.tape, g, skip_last_softmax=wrt == "logits")
    if return_input_grad:
        return bw.grads, gx
    return bw.grads
