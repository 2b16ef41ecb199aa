"""Command-line entry point: ``leancnn {analyze,train,evaluate,compare,curves}``.

Every ``--some-flag`` may also be set through the environment variable
``LEANCNN_SOME_FLAG``; explicit arguments win. Exit codes: 0 success,
2 usage or input error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import published
from .arch import ArchitectureError, ArchitectureSpec, builtin, parse_architecture, serialize_architecture
from .cost import CONVENTIONS, ConventionMismatch, CostReport, analyze, compare
from .data import (
    HAM10000_CLASSES,
    Dataset,
    DatasetError,
    NormalizationStats,
    augment_dataset,
    compute_stats,
    load_dataset,
    parse_synthetic,
    split,
    synth_dataset,
)
from .engine import forward
from .metrics import evaluation_report
from .params import check_compatible, init_parameters, set_trainable
from .plots import history_charts
from .train import AdamConfig, TrainConfig, TrainHistory, TrainingDiverged, train
from .weights_io import WeightsFormatError, load_weights, save_weights

ENV_PREFIX = "LEANCNN_"
EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class UsageError(Exception):
    pass


# -- helpers ------------------------------------------------------------------


def _add_arch(p: argparse.ArgumentParser) -> None:
    p.add_argument("arch", nargs="?", help="architecture DSL file")
    p.add_argument("--builtin", choices=("custom-cnn", "resnet50"), help="use a built-in architecture")
    p.add_argument("--input-size", type=int, help="square input size for built-ins (default 224, or the data size)")
    p.add_argument("--num-classes", type=int, help="output classes for built-ins (default 7, or the data class count)")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="image directory or synthetic:k,n,size")
    p.add_argument("--metadata", help="metadata CSV (default <data>/metadata.csv)")
    p.add_argument("--id-column", default="image_id")
    p.add_argument("--label-column", default="dx")
    p.add_argument("--classes", default=",".join(HAM10000_CLASSES), help="comma-separated class list")
    p.add_argument("--data-seed", type=int, default=0, help="seed of synthetic data")


def _load_arch(args, data_shape=None, data_classes=None) -> ArchitectureSpec:
    if args.builtin and args.arch:
        raise UsageError("give either an architecture file or --builtin, not both")
    if args.builtin:
        size = args.input_size
        shape = (size, size, 3) if size else data_shape
        k = args.num_classes or data_classes or 7
        return builtin(args.builtin, shape, k)
    if not args.arch:
        raise UsageError("an architecture file or --builtin is required")
    try:
        text = Path(args.arch).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {args.arch}: {exc.strerror}") from None
    return parse_architecture(text)


def _peek_data(args) -> tuple[tuple | None, int | None]:
    if args.data and args.data.startswith("synthetic:"):
        k, _, size = parse_synthetic(args.data)
        return (size, size, 3), k
    if args.data:
        return None, len(args.classes.split(","))
    return None, None


def _load_data(args, spec: ArchitectureSpec) -> Dataset:
    if not args.data:
        raise UsageError("--data is required")
    h, w = spec.input_shape[:2]
    if args.data.startswith("synthetic:"):
        k, n, size = parse_synthetic(args.data)
        if n < 1:
            raise DatasetError("dataset is empty")
        ds = synth_dataset(k, n, (h, w) if (h, w) != (size, size) else size, seed=args.data_seed)
        return ds
    directory = Path(args.data)
    meta = Path(args.metadata) if args.metadata else directory / "metadata.csv"
    return load_dataset(
        directory, meta, args.classes.split(","), args.id_column, args.label_column, size=(h, w)
    )


def _stats_to_json(stats: NormalizationStats) -> str:
    return json.dumps({"mean": stats.mean.tolist(), "std": stats.std.tolist()}, indent=2) + "\n"


def _stats_from_json(text: str) -> NormalizationStats:
    doc = json.loads(text)
    return NormalizationStats(np.array(doc["mean"]), np.array(doc["std"]))


def _apply_env(parser: argparse.ArgumentParser) -> None:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sub in action.choices.values():
                _apply_env(sub)
            continue
        longs = [o for o in action.option_strings if o.startswith("--")]
        if not longs or action.dest == "help":
            continue
        var = ENV_PREFIX + longs[0][2:].upper().replace("-", "_")
        if var not in os.environ:
            continue
        raw = os.environ[var]
        if isinstance(action, argparse._StoreTrueAction):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif isinstance(action, argparse._AppendAction):
            value = [v for v in raw.split(os.pathsep) if v]
        else:
            value = action.type(raw) if action.type else raw
        action.default = value
        action.required = False


def _echo_config(args, path: Path, extra: dict | None = None) -> None:
    items = {k: v for k, v in vars(args).items() if k != "func"}
    items.update(extra or {})
    lines = [f"{k}={json.dumps(items[k])}" for k in sorted(items)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- subcommands ------------------------------------------------------------


def cmd_analyze(args) -> int:
    spec = _load_arch(args)
    report = analyze(spec, args.flops_convention, args.extended, args.element_size)
    if args.builtin:
        report.notes.extend(published.notes_for(args.builtin, report))
    text = report.render(args.format)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_train(args) -> int:
    data_shape, data_classes = _peek_data(args)
    spec = _load_arch(args, data_shape, data_classes)
    dataset = _load_data(args, spec)
    if len(dataset) == 0:
        raise DatasetError("dataset is empty")
    if args.val_fraction:
        trainset, valset = _train_val(dataset, args.val_fraction, args.seed)
    else:
        trainset, valset = dataset, None
    if args.augment:
        trainset = augment_dataset(trainset, seed=args.seed)
    stats = compute_stats(trainset)
    trainset = trainset.with_stats(stats)
    if valset is not None:
        valset = valset.with_stats(stats)

    params = init_parameters(spec, args.seed)
    for pattern in args.freeze or []:
        set_trainable(params, pattern, False)
    for pattern in args.unfreeze or []:
        set_trainable(params, pattern, True)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(args, out / "config.echo", {"architecture": serialize_architecture(spec)})
    (out / "architecture.arch").write_text(serialize_architecture(spec), encoding="utf-8")
    (out / "stats.json").write_text(_stats_to_json(stats), encoding="utf-8")
    save_weights(out / "weights_init.lcw", params)

    config = TrainConfig(args.epochs, args.batch_size, args.loss, AdamConfig(lr=args.lr), args.seed)
    try:
        params, history = train(spec, params, trainset, config, val=valset)
    except TrainingDiverged as exc:
        (out / "history.csv").write_text(exc.history.to_csv(), encoding="utf-8")
        save_weights(out / "weights.lcw", exc.params)
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    save_weights(out / "weights.lcw", params)
    (out / "history.csv").write_text(history.to_csv(), encoding="utf-8")
    if len(history):
        last = history[-1]
        print(f"epoch {last.epoch}: train_loss={last.train_loss:.6f} train_acc={last.train_acc:.4f}")
    print(f"wrote {out / 'weights.lcw'}, {out / 'history.csv'}, {out / 'config.echo'}")
    return EXIT_OK


def _train_val(dataset: Dataset, fraction: float, seed: int):
    if not 0 < fraction < 1:
        raise UsageError("--val-fraction must be in (0, 1)")
    # two-way stratified split built from the three-way splitter
    half = fraction / 2
    a, b, c = split(dataset, (1 - fraction, half, half), seed)
    order = {i: n for n, i in enumerate(dataset.ids)}
    val = Dataset(sorted(b.images + c.images, key=lambda im: order[im.image_id]), dataset.classes)
    return a, val


def cmd_evaluate(args) -> int:
    data_shape, data_classes = _peek_data(args)
    spec = _load_arch(args, data_shape, data_classes)
    if not args.weights:
        raise UsageError("--weights is required")
    params = load_weights(args.weights, spec)
    try:
        check_compatible(spec, params)
    except ValueError as exc:
        raise UsageError(f"weights do not fit the architecture: {exc}") from None
    dataset = _load_data(args, spec)
    if len(dataset) == 0:
        raise DatasetError("dataset is empty")
    stats_path = Path(args.stats) if args.stats else Path(args.weights).with_name("stats.json")
    if stats_path.exists():
        dataset = dataset.with_stats(_stats_from_json(stats_path.read_text(encoding="utf-8")))
    k = spec.output_shape[0]
    if k != len(dataset.classes):
        raise UsageError(f"architecture has {k} outputs but the data has {len(dataset.classes)} classes")
    x, y = dataset.arrays()
    probs = np.concatenate(
        [forward(spec, params, x[i : i + args.batch_size], mode="infer")[0] for i in range(0, len(x), args.batch_size)]
    )
    report = evaluation_report(probs, y, dataset.classes)
    if args.out:
        report.write(args.out)
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _load_report(source: str) -> CostReport:
    path = Path(source)
    if not path.exists():
        try:
            value = float(source)
        except ValueError:
            raise UsageError(f"{source}: no such report file") from None
        return CostReport.from_totals(round(value))
    text = path.read_text(encoding="utf-8")
    try:
        if text.lstrip().startswith("{"):
            return CostReport.from_json(text)
        return CostReport.from_csv(text)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{source}: not a machine-format cost report ({exc})") from None


def cmd_compare(args) -> int:
    a, b = _load_report(args.report_a), _load_report(args.report_b)
    result = compare(a, b, args.acc_a, args.acc_b)
    sys.stdout.write(result.to_text())
    return EXIT_OK


def cmd_curves(args) -> int:
    try:
        history = TrainHistory.from_csv(Path(args.history).read_text(encoding="utf-8"))
    except OSError as exc:
        raise UsageError(f"cannot read {args.history}: {exc.strerror}") from None
    if len(history) == 0:
        raise UsageError("history is empty")
    out = Path(args.svg)
    out.mkdir(parents=True, exist_ok=True)
    for name, svg in history_charts(history).items():
        (out / f"{name}.svg").write_text(svg, encoding="utf-8")
    print(f"wrote {out / 'accuracy.svg'} and {out / 'loss.svg'}")
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leancnn", description="CNN cost analysis, training and evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="per-layer parameter/FLOP/memory report")
    _add_arch(p)
    p.add_argument("--flops-convention", choices=CONVENTIONS, default="mac-as-one")
    p.add_argument("--format", choices=("text", "csv", "json"), default="text")
    p.add_argument("--extended", action="store_true", help="add elementwise FLOPs for pooling/activations/batchnorm")
    p.add_argument("--element-size", type=int, default=4, help="bytes per weight for the memory estimate")
    p.add_argument("--out", help="write the report here instead of standard output")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train with Adam and write weights/history")
    _add_arch(p)
    _add_data(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--loss", choices=("categorical", "bce"), default="categorical")
    p.add_argument("--val-fraction", type=float, default=0.0, help="stratified validation hold-out")
    p.add_argument("--augment", action="store_true", help="seeded 90-degree rotations/flips of the training set")
    p.add_argument("--freeze", action="append", metavar="PATTERN", help="glob of layer names to freeze")
    p.add_argument("--unfreeze", action="append", metavar="PATTERN", help="glob of layer names to unfreeze")
    p.add_argument("--out", default="run")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="confusion matrix, P/R/F1 and ROC files")
    _add_arch(p)
    _add_data(p)
    p.add_argument("--weights", help="weights file written by train")
    p.add_argument("--stats", help="normalization stats JSON (default: stats.json next to the weights)")
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--out", help="directory for confusion.csv, metrics.csv, roc_<class>.csv")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="deviation table of two cost reports")
    p.add_argument("report_a", help="JSON/CSV report from analyze, or a FLOP total")
    p.add_argument("report_b", help="JSON/CSV report from analyze, or a FLOP total")
    p.add_argument("--acc-a", type=float, help="accuracy of A in percent")
    p.add_argument("--acc-b", type=float, help="accuracy of B in percent")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("curves", help="accuracy and loss curves as SVG")
    p.add_argument("history", help="history.csv written by train")
    p.add_argument("--svg", default=".", help="output directory")
    p.set_defaults(func=cmd_curves)

    _apply_env(parser)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ArchitectureError, DatasetError, ConventionMismatch, WeightsFormatError, KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except FloatingPointError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
