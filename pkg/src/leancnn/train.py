"""Losses, Adam, the training loop and finite-difference gradient checks."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .arch import ArchitectureSpec
from .engine import backward, forward
from .params import ParameterSet

CLAMP = 1e-7


# -- losses -------------------------------------------------------------------


def bce_loss(predictions, labels) -> float:
    """Mean binary cross-entropy; predictions are clamped to [1e-7, 1 - 1e-7]."""
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if p.shape != y.shape:
        raise ValueError(f"predictions {p.shape} and labels {y.shape} differ in length")
    if not np.all((y == 0) | (y == 1)):
        bad = y[(y != 0) & (y != 1)][0]
        raise ValueError(f"labels must be 0 or 1, got {bad!r}")
    p = np.clip(p, CLAMP, 1 - CLAMP)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log1p(-p)))


def categorical_ce(probabilities, labels, row_tol: float = 1e-3) -> float:
    """Mean of ``-sum(y * log p)`` over the batch for one-hot ``labels``."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.ndim != 2 or p.shape != y.shape:
        raise ValueError(f"probabilities {p.shape} and labels {y.shape} must both be (B, k)")
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise ValueError("labels are not one-hot")
    if np.any(np.abs(p.sum(axis=1) - 1) > row_tol):
        raise ValueError("probability rows do not sum to 1")
    p = np.clip(p, CLAMP, 1 - CLAMP)
    return float(-np.mean(np.sum(y * np.log(p), axis=1)))


def one_hot(labels, k: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, k))
    out[np.arange(labels.size), labels] = 1
    return out


def softmax_ce_grad(probabilities, onehot) -> np.ndarray:
    """Gradient of mean cross-entropy w.r.t. the softmax logits: (p - y) / B."""
    p = np.asarray(probabilities)
    return (p - onehot) / p.shape[0]


# -- Adam ---------------------------------------------------------------------


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    config: AdamConfig = field(default_factory=AdamConfig)
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: ParameterSet, grads: dict, state: AdamState) -> tuple[ParameterSet, AdamState]:
    """One bias-corrected Adam update; frozen layers are left bitwise unchanged.

    Returns new parameter and state objects; the inputs are not modified.
    """
    for name, slots in grads.items():
        for slot, g in slots.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in {name}/{slot}")
    cfg = state.config
    t = state.t + 1
    new = params.copy()
    m, v = dict(state.m), dict(state.v)
    c1 = 1 - cfg.beta1**t
    c2 = 1 - cfg.beta2**t
    for name, slots in grads.items():
        lp = new[name]
        if not lp.trainable:
            continue
        for slot, g in slots.items():
            theta = getattr(lp, slot)
            key = (name, slot)
            g = g.astype(theta.dtype, copy=False)
            m_prev = m.get(key, np.zeros_like(theta))
            v_prev = v.get(key, np.zeros_like(theta))
            m[key] = cfg.beta1 * m_prev + (1 - cfg.beta1) * g
            v[key] = cfg.beta2 * v_prev + (1 - cfg.beta2) * (g * g)
            m_hat = m[key] / c1
            v_hat = v[key] / c2
            with np.errstate(over="ignore", invalid="ignore"):
                updated = (theta - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(theta.dtype)
            if not np.all(np.isfinite(updated)):
                raise FloatingPointError(f"update of {name}/{slot} is not finite (learning rate too large?)")
            setattr(lp, slot, updated)
    return new, AdamState(cfg, t, m, v)


# -- history ------------------------------------------------------------------

HISTORY_HEADER = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    val_loss: float = math.nan
    val_acc: float = math.nan


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i) -> EpochRecord:
        return self.records[i]

    def append(self, rec: EpochRecord) -> None:
        expected = len(self.records) + 1
        if rec.epoch != expected:
            raise ValueError(f"epoch {rec.epoch} is not contiguous (expected {expected})")
        self.records.append(rec)

    def column(self, key: str) -> list[float]:
        return [getattr(r, key) for r in self.records]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_HEADER)
        for r in self.records:
            w.writerow([r.epoch] + [repr(float(getattr(r, k))) for k in HISTORY_HEADER[1:]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainHistory":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(c.strip() for c in rows[0]) != HISTORY_HEADER:
            raise ValueError(f"history header must be {','.join(HISTORY_HEADER)}")
        hist = cls()
        for lineno, row in enumerate(rows[1:], start=2):
            if not row:
                continue
            if len(row) != len(HISTORY_HEADER):
                raise ValueError(f"line {lineno}: expected {len(HISTORY_HEADER)} fields, got {len(row)}")
            try:
                hist.append(EpochRecord(int(row[0]), *(float(x) for x in row[1:])))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: {exc}") from None
        return hist


# -- training -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 16
    loss: str = "categorical"  # or "bce" (two-class networks only)
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if self.loss not in ("categorical", "bce"):
            raise ValueError(f"loss must be categorical or bce, got {self.loss!r}")


class TrainingDiverged(FloatingPointError):
    """Non-finite loss or gradient; carries the history and params so far."""

    def __init__(self, message, history: TrainHistory, params: ParameterSet):
        super().__init__(message)
        self.history = history
        self.params = params


def _as_arrays(data):
    if data is None:
        return None
    if hasattr(data, "arrays"):
        return data.arrays()
    x, y = data
    return np.asarray(x), np.asarray(y, dtype=np.int64)


def batch_loss(probs: np.ndarray, labels: np.ndarray, loss: str) -> float:
    k = probs.shape[1]
    if loss == "bce":
        if k != 2:
            raise ValueError("bce loss needs a two-class output layer")
        return bce_loss(probs[:, 1], labels)
    return categorical_ce(probs, one_hot(labels, k))


def _step_seed(seed: int, epoch: int, batch: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, batch]).generate_state(1)[0])


def evaluate_loss(spec, params, data, loss: str = "categorical", batch_size: int = 64) -> tuple[float, float]:
    """Inference-mode (mean loss, accuracy) over a dataset."""
    x, y = _as_arrays(data)
    total, correct = 0.0, 0
    for start in range(0, len(x), batch_size):
        probs, _ = forward(spec, params, x[start : start + batch_size], mode="infer")
        yb = y[start : start + batch_size]
        total += batch_loss(probs, yb, loss) * len(yb)
        correct += int(np.sum(np.argmax(probs, axis=1) == yb))
    return total / len(x), correct / len(x)


def train(
    spec: ArchitectureSpec,
    params: ParameterSet,
    data,
    config: TrainConfig = TrainConfig(),
    val=None,
    state: AdamState | None = None,
) -> tuple[ParameterSet, TrainHistory]:
    """Mini-batch Adam training.

    ``data``/``val`` are datasets (anything with ``arrays()``) or
    ``(images, int_labels)`` pairs. Shuffling, dropout masks and the update
    order depend only on ``config.seed``, so identical inputs give bitwise
    identical results. The last partial batch is kept.
    """
    x, y = _as_arrays(data)
    if len(x) == 0:
        raise ValueError("training data is empty")
    valset = _as_arrays(val)
    state = state or AdamState(config.adam)
    history = TrainHistory()
    k = spec.output_shape[0]
    for epoch in range(1, config.epochs + 1):
        order = np.random.default_rng(np.random.SeedSequence([config.seed, epoch])).permutation(len(x))
        total, correct = 0.0, 0
        for b, start in enumerate(range(0, len(x), config.batch_size)):
            idx = order[start : start + config.batch_size]
            xb, yb = x[idx], y[idx]
            try:
                with np.errstate(invalid="ignore", over="ignore"):
                    probs, cache = forward(spec, params, xb, mode="train", seed=_step_seed(config.seed, epoch, b))
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}, batch {b}: {exc}", history, params) from exc
            loss = batch_loss(probs, yb, config.loss)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}", history, params)
            total += loss * len(idx)
            correct += int(np.sum(np.argmax(probs, axis=1) == yb))
            grads = backward(spec, params, cache, softmax_ce_grad(probs, one_hot(yb, k)), wrt="logits")
            try:
                params, state = adam_step(params, grads, state)
            except FloatingPointError as exc:
                raise TrainingDiverged(str(exc), history, params) from exc
            for name, (mean, var) in cache.bn_updates.items():
                params[name].aux["moving_mean"] = mean
                params[name].aux["moving_var"] = var
        rec = dict(epoch=epoch, train_loss=total / len(x), train_acc=correct / len(x))
        if valset is not None:
            rec["val_loss"], rec["val_acc"] = evaluate_loss(spec, params, valset, config.loss)
        history.append(EpochRecord(**rec))
    return params, history


# -- gradient checking --------------------------------------------------------


@dataclass
class GradCheckReport:
    """Max relative error per ``layer/slot``; error = |a - n| / max(|a|, |n|, floor)."""

    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def per_layer(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for key, err in self.errors.items():
            layer = key.rpartition("/")[0]
            out[layer] = max(out.get(layer, 0.0), err)
        return out


def grad_check(
    spec: ArchitectureSpec,
    params: ParameterSet,
    batch,
    labels,
    tolerance: float = 1e-4,
    h: float = 1e-5,
    loss: str = "categorical",
    mode: str = "train",
    seed: int = 0,
    floor: float = 1e-5,
) -> GradCheckReport:
    """Compare analytic gradients with central differences in float64."""
    p64 = params.astype(np.float64)
    x = np.asarray(batch, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    k = spec.output_shape[0]

    def loss_of(ps):
        probs, _ = forward(spec, ps, x, mode=mode, seed=seed)
        return batch_loss(probs, y, loss)

    probs, cache = forward(spec, p64, x, mode=mode, seed=seed)
    grads = backward(spec, p64, cache, softmax_ce_grad(probs, one_hot(y, k)), wrt="logits")
    errors = {}
    for name, slots in grads.items():
        for slot, analytic in slots.items():
            theta = getattr(p64[name], slot)
            numeric = np.zeros_like(theta)
            flat = theta.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = loss_of(p64)
                flat[i] = orig - h
                down = loss_of(p64)
                flat[i] = orig
                numeric.reshape(-1)[i] = (up - down) / (2 * h)
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
            errors[f"{name}/{slot}"] = float(np.max(np.abs(analytic - numeric) / denom))
    return GradCheckReport(errors, tolerance)
