"""Analytic parameter, FLOP and weight-memory accounting.

FLOPs follow the plain product formulas

    conv:  H_out * W_out * C_in * C_out * K * K
    dense: n_in * n_out

with no bias term. ``mac-as-one`` (default) counts one multiply-accumulate
as one operation; ``mul-add-as-two`` doubles every count. Pooling,
activations, batchnorm and residual adds count zero unless ``extended=True``,
which adds the usual elementwise counts (labelled as such in every report).
All counts are Python integers.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from decimal import ROUND_HALF_UP, Decimal, localcontext
from fractions import Fraction

from .arch import ArchitectureSpec, LayerSpec, Shape, expand_block, layer_output_shape
from .tensor import ConvGeometry

CONVENTIONS = ("mac-as-one", "mul-add-as-two")


class ConventionMismatch(ValueError):
    pass


def _factor(convention: str) -> int:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown FLOP convention {convention!r}; expected one of {CONVENTIONS}")
    return 1 if convention == "mac-as-one" else 2


def conv_flops(geometry: ConvGeometry, convention: str = "mac-as-one") -> int:
    ho, wo = geometry.output_hw()
    k = geometry.kernel
    return ho * wo * geometry.in_channels * geometry.out_channels * k * k * _factor(convention)


def dense_flops(n_in: int, n_out: int, convention: str = "mac-as-one") -> int:
    if n_in < 1 or n_out < 1:
        raise ValueError("dense sizes must be >= 1")
    return n_in * n_out * _factor(convention)


def layer_params(layer: LayerSpec, in_shape: Shape) -> int:
    kind = layer.kind
    if kind == "conv2d":
        k = layer["kernel"]
        return (k * k * in_shape[-1] + 1) * layer["filters"]
    if kind == "dense":
        return (in_shape[0] + 1) * layer["units"]
    if kind == "batchnorm":
        return 4 * in_shape[-1]
    if kind == "residual_block":
        block = expand_block(layer, in_shape)
        total, shape = 0, in_shape
        for inner in block.inner:
            total += layer_params(inner, shape)
            shape = layer_output_shape(inner, shape)
        shape = in_shape
        for s in block.shortcut:
            total += layer_params(s, shape)
            shape = layer_output_shape(s, shape)
        return total
    return 0


def trainable_params(layer: LayerSpec, in_shape: Shape) -> int:
    if layer.kind == "batchnorm":
        return 2 * in_shape[-1]
    return layer_params(layer, in_shape)


def layer_flops(layer: LayerSpec, in_shape: Shape, out_shape: Shape, convention: str = "mac-as-one", extended: bool = False) -> int:
    """FLOPs of one leaf layer (a residual ``add`` entry counts its addition only)."""
    kind = layer.kind
    if kind == "conv2d":
        geo = ConvGeometry(in_shape[0], in_shape[1], in_shape[2], layer["filters"], layer["kernel"], layer["stride"], layer["padding"])
        n = conv_flops(geo, convention)
    elif kind == "dense":
        n = dense_flops(in_shape[0], layer["units"], convention)
    else:
        n = 0
    if not extended:
        return n
    elems = math.prod(out_shape)
    if kind in ("conv2d", "dense", "residual_block"):
        if kind == "residual_block":
            n += elems  # the addition
        act = layer.activation
        if act == "relu":
            n += elems
        elif act == "softmax":
            n += 3 * elems
    elif kind == "relu":
        n += elems
    elif kind == "softmax":
        n += 3 * elems
    elif kind == "maxpool2d":
        n += elems * layer["window"] ** 2
    elif kind == "batchnorm":
        n += 2 * elems
    elif kind == "global_avg_pool":
        n += math.prod(in_shape)
    return n


@dataclass(frozen=True)
class CostRow:
    name: str
    kind: str
    output_shape: tuple
    params: int
    flops: int
    memory_bytes: int
    trainable_params: int = 0


@dataclass
class CostReport:
    rows: list[CostRow]
    convention: str = "mac-as-one"
    extended: bool = False
    element_size: int = 4
    notes: list[str] = field(default_factory=list)
    totals_override: dict | None = None

    @property
    def total_params(self) -> int:
        if self.totals_override:
            return self.totals_override["params"]
        return sum(r.params for r in self.rows)

    @property
    def total_flops(self) -> int:
        if self.totals_override:
            return self.totals_override["flops"]
        return sum(r.flops for r in self.rows)

    @property
    def total_memory(self) -> int:
        if self.totals_override:
            return self.totals_override.get("memory_bytes", self.total_params * self.element_size)
        return sum(r.memory_bytes for r in self.rows)

    @property
    def total_trainable(self) -> int:
        return sum(r.trainable_params for r in self.rows)

    def row(self, name: str) -> CostRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    @classmethod
    def from_totals(cls, flops: int, params: int = 0, convention: str = "mac-as-one") -> "CostReport":
        """Report holding only totals, e.g. published reference figures."""
        _factor(convention)
        return cls([], convention, totals_override={"flops": int(flops), "params": int(params)})

    # -- formats ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "convention": self.convention,
            "extended": self.extended,
            "element_size": self.element_size,
            "rows": [dict(asdict(r), output_shape=list(r.output_shape)) for r in self.rows],
            "totals": {
                "params": self.total_params,
                "trainable_params": self.total_trainable,
                "flops": self.total_flops,
                "memory_bytes": self.total_memory,
            },
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "CostReport":
        rows = [CostRow(**dict(r, output_shape=tuple(r["output_shape"]))) for r in doc.get("rows", [])]
        rep = cls(rows, doc["convention"], bool(doc.get("extended", False)), int(doc.get("element_size", 4)), list(doc.get("notes", [])))
        totals = doc.get("totals")
        if totals and (not rows or totals["flops"] != rep.total_flops or totals["params"] != rep.total_params):
            rep.totals_override = {k: int(v) for k, v in totals.items()}
        return rep

    @classmethod
    def from_json(cls, text: str) -> "CostReport":
        return cls.from_dict(json.loads(text))

    CSV_HEADER = ("layer", "kind", "output_shape", "params", "trainable_params", "flops", "memory_bytes", "convention")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_HEADER)
        for r in self.rows:
            shape = "x".join(str(d) for d in r.output_shape)
            w.writerow([r.name, r.kind, shape, r.params, r.trainable_params, r.flops, r.memory_bytes, self.convention])
        w.writerow(["TOTAL", "", "", self.total_params, self.total_trainable, self.total_flops, self.total_memory, self.convention])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CostReport":
        reader = csv.DictReader(io.StringIO(text))
        if tuple(reader.fieldnames or ()) != cls.CSV_HEADER:
            raise ValueError("not a cost report CSV (unexpected header)")
        rows, total, convention = [], None, None
        for rec in reader:
            convention = rec["convention"]
            if rec["layer"] == "TOTAL":
                total = rec
                continue
            shape = tuple(int(d) for d in rec["output_shape"].split("x")) if rec["output_shape"] else ()
            rows.append(
                CostRow(rec["layer"], rec["kind"], shape, int(rec["params"]), int(rec["flops"]), int(rec["memory_bytes"]), int(rec["trainable_params"]))
            )
        if convention is None:
            raise ValueError("empty cost report CSV")
        rep = cls(rows, convention)
        if total and (int(total["flops"]) != rep.total_flops or int(total["params"]) != rep.total_params):
            rep.totals_override = {"flops": int(total["flops"]), "params": int(total["params"]), "memory_bytes": int(total["memory_bytes"])}
        return rep

    def to_text(self) -> str:
        header = ("Layer", "Kind", "Output Shape", "Params", "FLOPs", "Weights (B)")
        body = [
            (r.name, r.kind, str(r.output_shape), f"{r.params:,}", f"{r.flops:,}", f"{r.memory_bytes:,}")
            for r in self.rows
        ]
        body.append(("Total", "", "", f"{self.total_params:,}", f"{self.total_flops:,}", f"{self.total_memory:,}"))
        widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
        right = {3, 4, 5}

        def fmt(row):
            return "  ".join(c.rjust(w) if i in right else c.ljust(w) for i, (c, w) in enumerate(zip(row, widths))).rstrip()

        rule = "-" * len(fmt(header))
        lines = [fmt(header), rule] + [fmt(r) for r in body[:-1]] + [rule, fmt(body[-1])]
        label = self.convention + (", extended (non-formula elementwise counts included)" if self.extended else "")
        lines.append(f"FLOP convention: {label}")
        lines.append(f"Trainable params: {self.total_trainable:,}")
        lines.extend(f"Note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"

    def render(self, fmt: str) -> str:
        if fmt == "text":
            return self.to_text()
        if fmt == "csv":
            return self.to_csv()
        if fmt == "json":
            return self.to_json()
        raise ValueError(f"unknown format {fmt!r} (text, csv, json)")


def analyze(
    spec: ArchitectureSpec,
    convention: str = "mac-as-one",
    extended: bool = False,
    element_size: int = 4,
) -> CostReport:
    """One row per leaf layer (residual blocks expanded, plus their ``.add``)."""
    _factor(convention)
    rows = []
    for name, layer, in_shape, out_shape in spec.walk():
        if name.endswith(".add") and layer.kind == "residual_block":
            n_params = trainable = 0
            kind = "add"
        else:
            n_params = layer_params(layer, in_shape)
            trainable = trainable_params(layer, in_shape) if layer.trainable else 0
            kind = layer.kind
        flops = layer_flops(layer, in_shape, out_shape, convention, extended)
        rows.append(CostRow(name, kind, tuple(out_shape), n_params, flops, n_params * element_size, trainable))
    return CostReport(rows, convention, extended, element_size)


# -- comparison ---------------------------------------------------------------


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


def format_percent(value: Fraction | None, places: int = 2, signed: bool = True) -> str:
    """``Fraction`` -> ``"+13,215.58%"`` (round half up)."""
    if value is None:
        return "n/a"
    return format_number(value, places, signed) + "%"


def format_number(value: Fraction, places: int = 2, signed: bool = True) -> str:
    with localcontext() as ctx:
        ctx.prec = 60
        d = (Decimal(value.numerator) / Decimal(value.denominator)).quantize(
            Decimal(1).scaleb(-places), rounding=ROUND_HALF_UP
        )
    if d == 0:
        d = abs(d)
    text = f"{d:,.{places}f}"
    if signed and d > 0:
        text = "+" + text
    return text


def deviation_percent(a, b) -> Fraction | None:
    """Exact ``(b - a) / a * 100``; ``None`` when ``a`` is zero."""
    a, b = _exact(a), _exact(b)
    if a == 0:
        return None if b != 0 else Fraction(0)
    return (b - a) / a * 100


@dataclass(frozen=True)
class MetricComparison:
    metric: str
    a: Fraction
    b: Fraction
    deviation: Fraction | None  # relative, percent
    absolute: Fraction

    @property
    def deviation_text(self) -> str:
        return format_percent(self.deviation)


@dataclass
class ComparisonReport:
    metrics: list[MetricComparison]
    convention: str

    def __getitem__(self, metric: str) -> MetricComparison:
        for m in self.metrics:
            if m.metric == metric:
                return m
        raise KeyError(metric)

    def to_text(self) -> str:
        def num(metric, x):
            if metric == "accuracy":
                return format_number(x, 2, signed=False) + "%"
            return f"{int(x):,}" if x.denominator == 1 else format_number(x, 2, signed=False)

        header = ("Metric", "A", "B", "Abs. delta", "Deviation")
        body = []
        for m in self.metrics:
            if m.metric == "accuracy":
                delta = format_number(m.absolute) + " pts"
            else:
                delta = format_number(m.absolute) if m.absolute.denominator != 1 else (f"{int(m.absolute):+,}" if m.absolute else "0")
            body.append((m.metric, num(m.metric, m.a), num(m.metric, m.b), delta, m.deviation_text))
        widths = [max(len(r[i]) for r in [header] + body) for i in range(5)]
        lines = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))) for r in [header] + body]
        lines.insert(1, "-" * len(lines[0]))
        lines.append(f"FLOP convention: {self.convention}; deviation = (B - A) / A x 100")
        return "\n".join(lines) + "\n"


def compare(a: CostReport, b: CostReport, accuracy_a=None, accuracy_b=None) -> ComparisonReport:
    if a.convention != b.convention:
        raise ConventionMismatch(f"FLOP conventions differ: {a.convention} vs {b.convention}")
    metrics = []
    pairs = [("flops", a.total_flops, b.total_flops)]
    if a.rows or b.rows or a.total_params or b.total_params:
        pairs.append(("params", a.total_params, b.total_params))
    for metric, va, vb in pairs:
        fa, fb = _exact(va), _exact(vb)
        metrics.append(MetricComparison(metric, fa, fb, deviation_percent(fa, fb), fb - fa))
    if accuracy_a is not None and accuracy_b is not None:
        fa, fb = _exact(accuracy_a), _exact(accuracy_b)
        metrics.append(MetricComparison("accuracy", fa, fb, deviation_percent(fa, fb), fb - fa))
    return ComparisonReport(metrics, a.convention)
