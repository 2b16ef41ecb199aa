"""Architecture descriptions, the text DSL, shape inference and builders.

An :class:`ArchitectureSpec` is an ordered list of :class:`LayerSpec` values
starting with a single ``input`` layer. Residual blocks are stored compactly
(one ``residual_block`` layer) and expanded on demand into a
:class:`ResidualBlockSpec` once their input shape is known.

DSL, one layer per line::

    input 224 224 3
    conv2d name=c1 filters=32 kernel=3 stride=1 padding=same activation=relu
    maxpool2d window=2 stride=2
    flatten
    dense units=256 activation=relu
    dropout rate=0.5
    dense units=7 activation=softmax
    resblock filters=64 bottleneck=true projection=auto

Lines starting with ``#`` are comments. Keys may appear in any order; the
canonical form written by :func:`serialize_architecture` sorts them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

from .tensor import output_dim

Shape = tuple[int, ...]

KINDS = (
    "input",
    "conv2d",
    "maxpool2d",
    "flatten",
    "dense",
    "dropout",
    "relu",
    "softmax",
    "batchnorm",
    "residual_block",
    "global_avg_pool",
)
PARAMETRIC = ("conv2d", "dense", "batchnorm")
ACTIVATIONS = ("none", "relu", "softmax")

# kind -> (required keys, defaults)
_HYPER = {
    "input": (("shape",), {}),
    "conv2d": (("filters", "kernel"), {"stride": 1, "padding": "same", "activation": "none"}),
    "maxpool2d": ((), {"window": 2, "padding": "valid"}),
    "flatten": ((), {}),
    "dense": (("units",), {"activation": "none"}),
    "dropout": (("rate",), {}),
    "relu": ((), {}),
    "softmax": ((), {}),
    "batchnorm": ((), {"epsilon": 1e-3, "momentum": 0.99}),
    "residual_block": (
        ("filters",),
        {"bottleneck": True, "projection": "auto", "stride": 1, "activation": "relu"},
    ),
    "global_avg_pool": ((), {}),
}
_DSL_KIND = {"resblock": "residual_block"}
_KIND_DSL = {v: k for k, v in _DSL_KIND.items()}


class ArchitectureError(ValueError):
    """Invalid architecture; ``layer`` and ``line`` locate the problem when known."""

    def __init__(self, message: str, layer: str | None = None, line: int | None = None, field: str | None = None):
        self.layer = layer
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    hyper: dict = field(default_factory=dict)
    trainable: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArchitectureError(f"unknown layer kind {self.kind!r}", layer=self.name)
        required, defaults = _HYPER[self.kind]
        full = dict(defaults)
        if self.kind == "maxpool2d":
            full["stride"] = self.hyper.get("window", defaults["window"])
        full.update(self.hyper)
        for key in required:
            if key not in full:
                raise ArchitectureError(f"{self.kind} is missing hyperparameter {key!r}", layer=self.name, field=key)
        object.__setattr__(self, "hyper", full)
        _validate_hyper(self)

    def __getitem__(self, key):
        return self.hyper[key]

    @property
    def activation(self) -> str:
        return self.hyper.get("activation", "none")


def _validate_hyper(layer: LayerSpec) -> None:
    h = layer.hyper

    def positive(key):
        v = h[key]
        if isinstance(v, bool) or not isinstance(v, int) or v < 1:
            raise ArchitectureError(f"{key} must be a positive integer, got {v!r}", layer=layer.name, field=key)

    kind = layer.kind
    if kind == "input":
        shape = tuple(h["shape"])
        if not shape or any(not isinstance(d, int) or d < 1 for d in shape):
            raise ArchitectureError(f"input shape must be positive integers, got {shape}", layer=layer.name, field="shape")
        h["shape"] = shape
    elif kind == "conv2d":
        for key in ("filters", "kernel", "stride"):
            positive(key)
    elif kind == "maxpool2d":
        positive("window")
        positive("stride")
    elif kind == "dense":
        positive("units")
    elif kind == "dropout":
        rate = h["rate"]
        if isinstance(rate, bool) or not isinstance(rate, (int, float)) or not 0 <= rate < 1:
            raise ArchitectureError(f"rate must be in [0, 1), got {rate!r}", layer=layer.name, field="rate")
    elif kind == "batchnorm":
        if not h["epsilon"] > 0:
            raise ArchitectureError("epsilon must be > 0", layer=layer.name, field="epsilon")
    elif kind == "residual_block":
        positive("filters")
        positive("stride")
        if h["projection"] not in ("auto", True, False):
            raise ArchitectureError(
                f"projection must be auto/true/false, got {h['projection']!r}", layer=layer.name, field="projection"
            )
        if not isinstance(h["bottleneck"], bool):
            raise ArchitectureError("bottleneck must be true/false", layer=layer.name, field="bottleneck")
    if kind in ("conv2d", "maxpool2d") and h["padding"] not in ("same", "valid"):
        raise ArchitectureError(f"padding must be same/valid, got {h['padding']!r}", layer=layer.name, field="padding")
    if "activation" in h and h["activation"] not in ACTIVATIONS:
        raise ArchitectureError(f"unknown activation {h['activation']!r}", layer=layer.name, field="activation")


@dataclass(frozen=True)
class ResidualBlockSpec:
    """Expanded residual block: ``y = act(F(x) + shortcut(x))``.

    ``inner`` is the transformation F (may be empty, i.e. identity);
    ``shortcut`` is empty for an identity skip or holds the projection
    conv/batchnorm layers.
    """

    name: str
    inner: tuple[LayerSpec, ...]
    shortcut: tuple[LayerSpec, ...] = ()
    activation: str = "none"

    @property
    def projection(self) -> bool:
        return bool(self.shortcut)

    def layers(self) -> tuple[LayerSpec, ...]:
        return self.inner + self.shortcut


def expand_block(layer: LayerSpec, in_shape: Shape) -> ResidualBlockSpec:
    """Standard ResNet v1 block (bottleneck or basic) for a given input shape."""
    if len(in_shape) != 3:
        raise ArchitectureError(f"residual block needs (H, W, C) input, got {in_shape}", layer=layer.name)
    f, stride, n = layer["filters"], layer["stride"], layer.name
    t = layer.trainable

    def conv(suffix, filters, kernel, s=1):
        return LayerSpec("conv2d", f"{n}.{suffix}", {"filters": filters, "kernel": kernel, "stride": s, "padding": "same"}, t)

    def bn(suffix):
        return LayerSpec("batchnorm", f"{n}.{suffix}", {"epsilon": 1.001e-5}, t)

    def act(suffix):
        return LayerSpec("relu", f"{n}.{suffix}", {}, t)

    if layer["bottleneck"]:
        out_c = 4 * f
        inner = (
            conv("conv1", f, 1, stride), bn("bn1"), act("relu1"),
            conv("conv2", f, 3), bn("bn2"), act("relu2"),
            conv("conv3", out_c, 1), bn("bn3"),
        )
    else:
        out_c = f
        inner = (conv("conv1", f, 3, stride), bn("bn1"), act("relu1"), conv("conv2", f, 3), bn("bn2"))
    proj = layer["projection"]
    if proj == "auto":
        proj = stride != 1 or in_shape[2] != out_c
    if not proj and stride != 1:
        raise ArchitectureError("identity skip cannot change spatial size (stride != 1)", layer=n, field="projection")
    if not proj and in_shape[2] != out_c:
        raise ArchitectureError(
            f"identity skip needs {out_c} input channels, got {in_shape[2]}", layer=n, field="projection"
        )
    shortcut = (conv("proj", out_c, 1, stride), bn("proj_bn")) if proj else ()
    return ResidualBlockSpec(n, inner, shortcut, layer["activation"])


def layer_output_shape(layer: LayerSpec, in_shape: Shape) -> Shape:
    kind = layer.kind
    rank = len(in_shape)

    def need(r):
        if rank != r:
            raise ArchitectureError(
                f"{kind} {layer.name!r} needs rank-{r} input, got shape {in_shape}"
                + (" (missing flatten?)" if kind == "dense" else ""),
                layer=layer.name,
            )

    if kind == "input":
        return layer["shape"]
    if kind == "conv2d":
        need(3)
        h, w, _ = in_shape
        try:
            ho = output_dim(h, layer["kernel"], layer["stride"], layer["padding"], "height")
            wo = output_dim(w, layer["kernel"], layer["stride"], layer["padding"], "width")
        except ValueError as exc:
            raise ArchitectureError(str(exc), layer=layer.name) from exc
        return (ho, wo, layer["filters"])
    if kind == "maxpool2d":
        need(3)
        h, w, c = in_shape
        try:
            ho = output_dim(h, layer["window"], layer["stride"], layer["padding"], "height")
            wo = output_dim(w, layer["window"], layer["stride"], layer["padding"], "width")
        except ValueError as exc:
            raise ArchitectureError(str(exc), layer=layer.name) from exc
        return (ho, wo, c)
    if kind == "flatten":
        return (math.prod(in_shape),)
    if kind == "dense":
        need(1)
        return (layer["units"],)
    if kind == "global_avg_pool":
        need(3)
        return (in_shape[2],)
    if kind == "softmax":
        need(1)
        if in_shape[0] < 2:
            raise ArchitectureError("softmax needs at least 2 units", layer=layer.name)
        return in_shape
    if kind == "residual_block":
        block = expand_block(layer, in_shape)
        return block_output_shape(block, in_shape)
    return in_shape  # dropout, relu, batchnorm


def block_output_shape(block: ResidualBlockSpec, in_shape: Shape) -> Shape:
    main = in_shape
    for inner in block.inner:
        main = layer_output_shape(inner, main)
    skip = in_shape
    for s in block.shortcut:
        skip = layer_output_shape(s, skip)
    if main != skip:
        raise ArchitectureError(f"residual branches disagree: {main} vs {skip}", layer=block.name)
    return main


@dataclass(frozen=True)
class ArchitectureSpec:
    layers: tuple[LayerSpec, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        if not layers or layers[0].kind != "input":
            raise ArchitectureError("no input layer" if not any(l.kind == "input" for l in layers) else "first layer must be input")
        if sum(l.kind == "input" for l in layers) != 1:
            bad = [l.name for l in layers if l.kind == "input"][1]
            raise ArchitectureError("exactly one input layer allowed", layer=bad)
        seen = set()
        for name, *_ in self.walk():
            if name in seen:
                raise ArchitectureError(f"duplicate layer name {name!r}", layer=name)
            seen.add(name)

    @property
    def input_shape(self) -> Shape:
        return self.layers[0]["shape"]

    @property
    def output_shape(self) -> Shape:
        return infer_shapes(self)[-1][1]

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, name: str) -> LayerSpec:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def walk(self) -> Iterator[tuple[str, LayerSpec, Shape, Shape]]:
        """Yield ``(name, layer, in_shape, out_shape)`` for every leaf layer.

        Residual blocks are expanded: their inner and shortcut layers are
        yielded in order, followed by a synthetic ``<block>.add`` entry
        carrying the block itself.
        """
        shape: Shape = ()
        for layer in self.layers:
            if layer.kind == "residual_block":
                block = expand_block(layer, shape)
                cur = shape
                for inner in block.inner:
                    out = layer_output_shape(inner, cur)
                    yield inner.name, inner, cur, out
                    cur = out
                cur = shape
                for s in block.shortcut:
                    out = layer_output_shape(s, cur)
                    yield s.name, s, cur, out
                    cur = out
                out = block_output_shape(block, shape)
                yield f"{layer.name}.add", layer, out, out
                shape = out
            else:
                out = layer_output_shape(layer, shape)
                yield layer.name, layer, shape, out
                shape = out

    def parametric(self) -> Iterator[tuple[str, LayerSpec, Shape]]:
        """``(name, layer, in_shape)`` for every layer that owns parameters."""
        for name, layer, in_shape, _ in self.walk():
            if layer.kind in PARAMETRIC:
                yield name, layer, in_shape


def infer_shapes(spec: ArchitectureSpec) -> list[tuple[str, Shape]]:
    """Output shape of every top-level layer, input included."""
    out = []
    shape: Shape = ()
    for layer in spec.layers:
        shape = layer_output_shape(layer, shape)
        out.append((layer.name, shape))
    return out


# -- DSL -------------------------------------------------------------------


def _parse_value(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def parse_architecture(text: str) -> ArchitectureSpec:
    layers: list[LayerSpec] = []
    lines: dict[str, int] = {}
    counters: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        word, *rest = line.split()
        kind = _DSL_KIND.get(word, word)
        if kind not in KINDS:
            raise ArchitectureError(f"unknown layer kind {word!r}", line=lineno)
        hyper: dict = {}
        positional = []
        for tok in rest:
            if "=" in tok:
                key, _, val = tok.partition("=")
                if key in hyper:
                    raise ArchitectureError(f"repeated key {key!r}", line=lineno, field=key)
                hyper[key] = _parse_value(val)
            else:
                positional.append(_parse_value(tok))
        if kind == "input":
            if positional:
                hyper["shape"] = tuple(positional)
        elif positional:
            raise ArchitectureError(f"unexpected positional value(s) {positional}", line=lineno)
        name = hyper.pop("name", None)
        trainable = hyper.pop("trainable", True)
        if name is None:
            counters[kind] = counters.get(kind, 0) + 1
            name = "input" if kind == "input" else f"{kind}_{counters[kind]}"
        name = str(name)
        known = set(_HYPER[kind][0]) | set(_HYPER[kind][1]) | ({"stride"} if kind == "maxpool2d" else set())
        unknown = set(hyper) - known
        if unknown:
            raise ArchitectureError(f"unknown key(s) {sorted(unknown)} for {word}", line=lineno, layer=name)
        try:
            layers.append(LayerSpec(kind, name, hyper, bool(trainable)))
        except ArchitectureError as exc:
            raise ArchitectureError(str(exc), layer=name, line=lineno, field=exc.field) from None
        lines.setdefault(name, lineno)
    try:
        spec = ArchitectureSpec(tuple(layers))
        list(spec.walk())
    except ArchitectureError as exc:
        raise ArchitectureError(str(exc), layer=exc.layer, line=_line_of(exc.layer, lines), field=exc.field) from None
    return spec


def _line_of(name: str | None, lines: dict[str, int]) -> int | None:
    while name:
        if name in lines:
            return lines[name]
        name = name.rpartition(".")[0]
    return None


def serialize_architecture(spec: ArchitectureSpec) -> str:
    out = []
    for layer in spec.layers:
        if layer.kind == "input":
            dims = " ".join(str(d) for d in layer["shape"])
            extra = "" if layer.name == "input" else f" name={layer.name}"
            out.append(f"input {dims}{extra}")
            continue
        items = dict(layer.hyper)
        items["name"] = layer.name
        if not layer.trainable:
            items["trainable"] = False
        kv = " ".join(f"{k}={_format_value(items[k])}" for k in sorted(items))
        word = _KIND_DSL.get(layer.kind, layer.kind)
        out.append(f"{word} {kv}".rstrip())
    return "\n".join(out) + "\n"


# -- builders ----------------------------------------------------------------


def build_custom_cnn(input_shape: Shape = (224, 224, 3), num_classes: int = 7) -> ArchitectureSpec:
    """Three conv/pool stages, a 256-unit dense layer, dropout 0.5, softmax head."""
    conv = lambda name, f: LayerSpec(  # noqa: E731
        "conv2d", name, {"filters": f, "kernel": 3, "stride": 1, "padding": "same", "activation": "relu"}
    )
    pool = lambda name: LayerSpec("maxpool2d", name, {"window": 2, "stride": 2})  # noqa: E731
    return ArchitectureSpec(
        (
            LayerSpec("input", "input", {"shape": tuple(input_shape)}),
            conv("c1", 32),
            pool("p1"),
            conv("c2", 64),
            pool("p2"),
            conv("c3", 128),
            pool("p3"),
            LayerSpec("flatten", "flatten"),
            LayerSpec("dense", "d1", {"units": 256, "activation": "relu"}),
            LayerSpec("dropout", "drop", {"rate": 0.5}),
            LayerSpec("dense", "out", {"units": num_classes, "activation": "softmax"}),
        )
    )


RESNET50_STAGES = ((64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2))


@dataclass(frozen=True)
class HeadConfig:
    """Classification head for :func:`build_resnet50`.

    ``include=False`` yields the bare backbone (ends at global average pool).
    ``hidden_units`` adds one ReLU dense layer (plus dropout if
    ``dropout > 0``) before the softmax output.
    """

    include: bool = True
    hidden_units: int | None = None
    dropout: float = 0.0


def build_resnet50(
    num_classes: int = 7,
    head: HeadConfig | None = None,
    input_shape: Shape = (224, 224, 3),
) -> ArchitectureSpec:
    """ResNet50 v1: 7x7/2 stem, 3/4/6/3 bottleneck stages, global average pool."""
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    head = head or HeadConfig()
    layers = [
        LayerSpec("input", "input", {"shape": tuple(input_shape)}),
        LayerSpec("conv2d", "stem.conv", {"filters": 64, "kernel": 7, "stride": 2, "padding": "same"}),
        LayerSpec("batchnorm", "stem.bn", {"epsilon": 1.001e-5}),
        LayerSpec("relu", "stem.relu"),
        LayerSpec("maxpool2d", "stem.pool", {"window": 3, "stride": 2, "padding": "same"}),
    ]
    for s, (filters, blocks, stride) in enumerate(RESNET50_STAGES, start=1):
        for b in range(1, blocks + 1):
            layers.append(
                LayerSpec(
                    "residual_block",
                    f"stage{s}.block{b}",
                    {"filters": filters, "bottleneck": True, "stride": stride if b == 1 else 1},
                )
            )
    layers.append(LayerSpec("global_avg_pool", "gap"))
    if head.include:
        if head.hidden_units:
            layers.append(LayerSpec("dense", "head.hidden", {"units": head.hidden_units, "activation": "relu"}))
            if head.dropout:
                layers.append(LayerSpec("dropout", "head.dropout", {"rate": head.dropout}))
        layers.append(LayerSpec("dense", "head.out", {"units": num_classes, "activation": "softmax"}))
    return ArchitectureSpec(tuple(layers))


def builtin(name: str, input_shape: Shape | None = None, num_classes: int = 7) -> ArchitectureSpec:
    kwargs = {"num_classes": num_classes}
    if input_shape is not None:
        kwargs["input_shape"] = tuple(input_shape)
    if name == "custom-cnn":
        return build_custom_cnn(**kwargs)
    if name == "resnet50":
        return build_resnet50(**kwargs)
    raise KeyError(f"unknown builtin architecture {name!r} (expected custom-cnn or resnet50)")
