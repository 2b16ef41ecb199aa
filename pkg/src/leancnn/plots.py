"""Minimal self-contained SVG line charts for training curves."""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 420
MARGIN = dict(left=70, right=150, top=40, bottom=55)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def line_chart(series: dict[str, list[tuple[float, float]]], title: str, xlabel: str, ylabel: str) -> str:
    """Render named (x, y) series; non-finite points are skipped."""
    pts = [(x, y) for s in series.values() for x, y in s if math.isfinite(y)]
    xs = [p[0] for p in pts] or [0.0, 1.0]
    ys = [p[1] for p in pts] or [0.0, 1.0]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return MARGIN["top"] + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{escape(title)}</text>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    for t in _ticks(y0, y1):
        y = sy(t)
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{y:.2f}" x2="{MARGIN["left"]}" y2="{y:.2f}" stroke="black"/>')
        out.append(
            f'<text x="{MARGIN["left"] - 8}" y="{y + 4:.2f}" text-anchor="end" font-family="sans-serif" font-size="11">{t:.3g}</text>'
        )
    for t in _ticks(x0, x1):
        x = sx(t)
        yb = MARGIN["top"] + ph
        out.append(f'<line x1="{x:.2f}" y1="{yb}" x2="{x:.2f}" y2="{yb + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{yb + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">{t:.3g}</text>')
    out.append(
        f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" font-size="13">{escape(xlabel)}</text>'
    )
    cy = MARGIN["top"] + ph / 2
    out.append(
        f'<text x="18" y="{cy:.1f}" text-anchor="middle" transform="rotate(-90 18 {cy:.1f})" font-family="sans-serif" font-size="13">{escape(ylabel)}</text>'
    )
    for i, (name, s) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        finite = [(x, y) for x, y in s if math.isfinite(y)]
        if finite:
            coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in finite)
            out.append(f'<polyline class="series" data-name="{escape(name)}" points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
        ly = MARGIN["top"] + 16 + 20 * i
        lx = WIDTH - MARGIN["right"] + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly + 4}" font-family="sans-serif" font-size="12">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def history_charts(history) -> dict[str, str]:
    """``{"accuracy": svg, "loss": svg}`` for a :class:`TrainHistory`."""
    if len(history) == 0:
        raise ValueError("history is empty")
    epochs = [r.epoch for r in history.records]

    def series(key):
        return list(zip(epochs, history.column(key)))

    acc = {"train": series("train_acc")}
    loss = {"train": series("train_loss")}
    if any(math.isfinite(v) for v in history.column("val_acc")):
        acc["validation"] = series("val_acc")
        loss["validation"] = series("val_loss")
    return {
        "accuracy": line_chart(acc, "Model Accuracy", "epoch", "accuracy"),
        "loss": line_chart(loss, "Model Loss", "epoch", "loss"),
    }
