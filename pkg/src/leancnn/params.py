"""Parameter storage and initialization."""

from __future__ import annotations

import fnmatch
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .arch import ArchitectureSpec, LayerSpec, Shape
from .tensor import DEFAULT_DTYPE


@dataclass
class LayerParams:
    """Weights of one layer.

    For batchnorm ``weights``/``bias`` are gamma/beta and ``aux`` holds the
    running mean and variance (never touched by the optimizer).
    """

    weights: np.ndarray
    bias: np.ndarray
    trainable: bool = True
    aux: dict[str, np.ndarray] = field(default_factory=dict)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias, **self.aux}

    def copy(self) -> "LayerParams":
        return LayerParams(
            self.weights.copy(), self.bias.copy(), self.trainable, {k: v.copy() for k, v in self.aux.items()}
        )


class ParameterSet(dict):
    """Mapping ``layer name -> LayerParams`` in network order."""

    def copy(self) -> "ParameterSet":
        return ParameterSet((k, v.copy()) for k, v in self.items())

    def tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """Flat ``("layer/slot", array)`` pairs, e.g. ``"c1/weights"``."""
        for name, lp in self.items():
            for slot, arr in lp.arrays().items():
                yield f"{name}/{slot}", arr

    def count(self) -> int:
        return sum(a.size for _, a in self.tensors())

    def trainable_names(self) -> list[str]:
        return [k for k, v in self.items() if v.trainable]

    def astype(self, dtype) -> "ParameterSet":
        out = ParameterSet()
        for k, v in self.items():
            out[k] = LayerParams(
                v.weights.astype(dtype), v.bias.astype(dtype), v.trainable, {a: t.astype(dtype) for a, t in v.aux.items()}
            )
        return out


def param_shapes(layer: LayerSpec, in_shape: Shape) -> dict[str, tuple[int, ...]]:
    """Shapes of every tensor a layer owns (empty for parameter-free layers)."""
    if layer.kind == "conv2d":
        k, c_out = layer["kernel"], layer["filters"]
        return {"weights": (k, k, in_shape[-1], c_out), "bias": (c_out,)}
    if layer.kind == "dense":
        return {"weights": (in_shape[0], layer["units"]), "bias": (layer["units"],)}
    if layer.kind == "batchnorm":
        c = in_shape[-1]
        return {"weights": (c,), "bias": (c,), "moving_mean": (c,), "moving_var": (c,)}
    return {}


def init_parameters(spec: ArchitectureSpec, seed: int = 0, dtype=DEFAULT_DTYPE) -> ParameterSet:
    """He-uniform conv/dense weights, zero biases, identity batchnorm.

    Deterministic in ``seed``: each parametric layer draws from its own
    child stream of ``numpy.random.SeedSequence(seed)``.
    """
    layers = list(spec.parametric())
    children = np.random.SeedSequence(seed).spawn(len(layers))
    params = ParameterSet()
    for (name, layer, in_shape), child in zip(layers, children):
        shapes = param_shapes(layer, in_shape)
        if layer.kind == "batchnorm":
            c = shapes["weights"]
            params[name] = LayerParams(
                np.ones(c, dtype),
                np.zeros(c, dtype),
                layer.trainable,
                {"moving_mean": np.zeros(c, dtype), "moving_var": np.ones(c, dtype)},
            )
            continue
        w_shape = shapes["weights"]
        fan_in = int(np.prod(w_shape[:-1]))
        limit = np.sqrt(6.0 / fan_in)
        rng = np.random.default_rng(child)
        w = rng.uniform(-limit, limit, size=w_shape).astype(dtype)
        params[name] = LayerParams(w, np.zeros(shapes["bias"], dtype), layer.trainable)
    return params


def set_trainable(params: ParameterSet, pattern: str, flag: bool) -> int:
    """Set the trainable flag of every layer whose name matches the glob ``pattern``.

    Returns the number of layers matched; raises ``KeyError`` when nothing
    matches so a typo cannot silently freeze nothing.
    """
    matched = [name for name in params if fnmatch.fnmatchcase(name, pattern)]
    if not matched:
        raise KeyError(f"pattern {pattern!r} matches no layer")
    for name in matched:
        params[name].trainable = bool(flag)
    return len(matched)


def check_compatible(spec: ArchitectureSpec, params: ParameterSet) -> None:
    """Raise ``ValueError`` unless ``params`` has exactly the tensors ``spec`` needs."""
    expected = {name: param_shapes(layer, in_shape) for name, layer, in_shape in spec.parametric()}
    missing = sorted(set(expected) - set(params))
    extra = sorted(set(params) - set(expected))
    if missing or extra:
        raise ValueError(f"parameter names do not match architecture (missing={missing}, unexpected={extra})")
    for name, shapes in expected.items():
        arrays = params[name].arrays()
        for slot, shape in shapes.items():
            if slot not in arrays or arrays[slot].shape != shape:
                got = arrays[slot].shape if slot in arrays else None
                raise ValueError(f"{name}/{slot}: expected shape {shape}, got {got}")
