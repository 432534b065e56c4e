"""Deterministic SVG rendering of curves, heatmaps, bar charts and timelines.

Output depends only on the input data: coordinates are written with a fixed
number of decimals and there are no timestamps, ids or random layout.
"""

from __future__ import annotations

import math
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .metrics import CurveData

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")
FONT = 'font-family="sans-serif"'


def _f(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


class Canvas:
    """Plot area with linear data-to-pixel mapping (y grows upward)."""

    def __init__(self, xlim, ylim, width=480, height=360, margin=(50, 20, 30, 55), title: str = ""):
        self.width, self.height = width, height
        self.top, self.right, self.bottom, self.left = margin
        self.x0, self.x1 = _pad(*xlim)
        self.y0, self.y1 = _pad(*ylim)
        self.parts: list[str] = []
        self.title = title

    @property
    def pw(self) -> float:
        return self.width - self.left - self.right

    @property
    def ph(self) -> float:
        return self.height - self.top - self.bottom

    def px(self, x) -> float:
        return self.left + (x - self.x0) / (self.x1 - self.x0) * self.pw

    def py(self, y) -> float:
        return self.top + (1 - (y - self.y0) / (self.y1 - self.y0)) * self.ph

    def polyline(self, xs, ys, color, width=1.5, dash: str | None = None):
        xs, ys = np.clip(xs, self.x0, self.x1), np.clip(ys, self.y0, self.y1)
        pts = " ".join(f"{_f(self.px(x))},{_f(self.py(y))}" for x, y in zip(xs, ys))
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{d}/>')

    def points(self, xs, ys, color, r=2.5):
        for x, y in zip(xs, ys):
            if np.isfinite(x) and np.isfinite(y):
                self.parts.append(f'<circle cx="{_f(self.px(x))}" cy="{_f(self.py(y))}" r="{r}" fill="{color}" fill-opacity="0.6"/>')

    def text(self, x, y, s, size=11, anchor="middle", rotate: float | None = None):
        rot = f' transform="rotate({_f(rotate)} {_f(x)} {_f(y)})"' if rotate is not None else ""
        self.parts.append(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" text-anchor="{anchor}" {FONT}{rot}>{escape(str(s))}</text>')

    def axes(self, xlabel: str, ylabel: str, n_ticks: int = 5):
        l, t, r, b = self.left, self.top, self.left + self.pw, self.top + self.ph
        self.parts.append(f'<rect x="{_f(l)}" y="{_f(t)}" width="{_f(self.pw)}" height="{_f(self.ph)}" fill="none" stroke="#333"/>')
        for v in _ticks(self.x0, self.x1, n_ticks):
            x = self.px(v)
            self.parts.append(f'<line x1="{_f(x)}" y1="{_f(b)}" x2="{_f(x)}" y2="{_f(b + 4)}" stroke="#333"/>')
            self.text(x, b + 16, _label(v), 10)
        for v in _ticks(self.y0, self.y1, n_ticks):
            y = self.py(v)
            self.parts.append(f'<line x1="{_f(l - 4)}" y1="{_f(y)}" x2="{_f(l)}" y2="{_f(y)}" stroke="#333"/>')
            self.text(l - 7, y + 3, _label(v), 10, anchor="end")
        self.text(l + self.pw / 2, self.height - 6, xlabel, 12)
        self.text(14, t + self.ph / 2, ylabel, 12, rotate=-90)

    def legend(self, entries: Sequence[tuple[str, str, str | None]]):
        x, y = self.left + 8, self.top + 14
        for name, color, dash in entries:
            d = f' stroke-dasharray="{dash}"' if dash else ""
            self.parts.append(f'<line x1="{_f(x)}" y1="{_f(y - 4)}" x2="{_f(x + 18)}" y2="{_f(y - 4)}" stroke="{color}" stroke-width="2"{d}/>')
            self.text(x + 22, y, name, 10, anchor="start")
            y += 14

    def render(self) -> str:
        return _document(self.width, self.height, self.parts, self.title)


def _document(width, height, parts, title="") -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}">')
    body = [head, f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        body.append(f'<text x="{width / 2:.2f}" y="18" font-size="13" text-anchor="middle" {FONT}>{escape(title)}</text>')
    return "\n".join(body + list(parts) + ["</svg>", ""])


def _pad(a: float, b: float) -> tuple[float, float]:
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError("axis limits must be finite")
    if a == b:
        return a - 0.5, b + 0.5
    return (a, b) if a < b else (b, a)


def _ticks(a: float, b: float, n: int) -> np.ndarray:
    step = (b - a) / max(n, 1)
    mag = 10 ** math.floor(math.log10(step))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= step), default=10 * mag)
    return np.arange(math.ceil(a / step - 1e-9) * step, b + step * 1e-9, step)


def _label(v: float) -> str:
    return f"{v:g}" if abs(v) >= 1e-9 else "0"


def _finite_range(*arrays) -> tuple[float, float]:
    vals = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays])
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return -1.0, 1.0
    return float(vals.min()), float(vals.max())


# ---------------------------------------------------------------- curves

def render_curve(curve: CurveData, style: dict | None = None) -> str:
    """SVG for a pav, tippett or ece curve. ``style`` may set width, height,
    title and colors (a list)."""
    if len(curve.x) == 0:
        raise ValueError("cannot render an empty curve")
    style = dict(style or {})
    colors = style.get("colors", PALETTE)
    size = dict(width=style.get("width", 480), height=style.get("height", 360), title=style.get("title", ""))
    if curve.kind == "pav":
        return _render_pav(curve, colors, size)
    if curve.kind == "tippett":
        return _render_tippett(curve, colors, size)
    if curve.kind == "ece":
        return _render_ece(curve, colors, size)
    raise ValueError(f"unknown curve kind {curve.kind!r}")


def _render_pav(curve, colors, size) -> str:
    x, y = curve.x, curve.series["pav"]
    lo, hi = _finite_range(x, y)
    c = Canvas((lo, hi), (lo, hi), **size)
    c.axes("system log10 LR", "PAV-optimal log10 LR")
    c.polyline([c.x0, c.x1], [c.x0, c.x1], "#555", 1.0, dash="4,3")
    c.points(x, y, colors[0])
    c.legend([("PAV", colors[0], None), ("y = x", "#555", "4,3")])
    return c.render()


def _render_tippett(curve, colors, size) -> str:
    c = Canvas(_finite_range(curve.x), (0.0, 1.0), **size)
    c.axes("log10 LR", "proportion >= x")
    entries = []
    for i, (name, ys) in enumerate(curve.series.items()):
        xs, ys2 = _steps(curve.x, ys)
        c.polyline(xs, ys2, colors[i % len(colors)])
        entries.append((name, colors[i % len(colors)], None))
    c.legend(entries)
    return c.render()


def _steps(x, y):
    xs = np.repeat(np.asarray(x, dtype=float), 2)[1:]
    ys = np.repeat(np.asarray(y, dtype=float), 2)[:-1]
    return xs, ys


def _render_ece(curve, colors, size) -> str:
    series = curve.series
    _, hi = _finite_range(*series.values())
    c = Canvas(_finite_range(curve.x), (0.0, max(hi, 1e-3)), **size)
    c.axes("prior log10 odds", "empirical cross-entropy (bits)")
    styles = {"ece": (colors[0], None), "reference": ("#555", "2,3"), "calibrated": (colors[1], "6,3")}
    entries = []
    for name, ys in series.items():
        color, dash = styles.get(name, (colors[2], None))
        c.polyline(curve.x, ys, color, dash=dash)
        entries.append((name, color, dash))
    c.legend(entries)
    return c.render()


# ---------------------------------------------------------------- matrices

def _color_scale(v: float, vmin: float, vmax: float) -> str:
    """White (low) to dark red (high)."""
    t = 0.0 if vmax <= vmin else min(max((v - vmin) / (vmax - vmin), 0.0), 1.0)
    r = int(round(255 - 80 * t))
    g = int(round(255 - 230 * t))
    b = int(round(255 - 230 * t))
    return f"#{r:02x}{g:02x}{b:02x}"


def render_heatmap(matrix: np.ndarray, row_labels: Sequence[str], col_labels: Sequence[str] | None = None,
                   title: str = "", vmin: float = 0.0, vmax: float | None = None,
                   highlight_diagonal: bool = True, cell: int = 30) -> str:
    """Annotated heatmap; NaN cells are drawn grey and labelled n/a."""
    m = np.asarray(matrix, dtype=float)
    col_labels = list(row_labels) if col_labels is None else list(col_labels)
    if m.shape != (len(row_labels), len(col_labels)):
        raise ValueError("matrix shape does not match labels")
    finite = m[np.isfinite(m)]
    vmax = (float(finite.max()) if finite.size else 1.0) if vmax is None else vmax
    left, top = 110, 40
    width, height = left + cell * m.shape[1] + 20, top + cell * m.shape[0] + 110
    parts = []
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            x, y, v = left + j * cell, top + i * cell, m[i, j]
            if np.isfinite(v):
                fill = "#c7e9c0" if (highlight_diagonal and i == j) else _color_scale(v, vmin, vmax)
                label = f"{v:.2f}"
            else:
                fill, label = "#dddddd", "n/a"
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{fill}" stroke="white"/>')
            parts.append(f'<text x="{x + cell / 2:.2f}" y="{y + cell / 2 + 3:.2f}" font-size="8" text-anchor="middle" {FONT}>{label}</text>')
    for i, lab in enumerate(row_labels):
        parts.append(f'<text x="{left - 5}" y="{top + i * cell + cell / 2 + 4:.2f}" font-size="10" text-anchor="end" {FONT}>{escape(str(lab))}</text>')
    for j, lab in enumerate(col_labels):
        x, y = left + j * cell + cell / 2, top + m.shape[0] * cell + 8
        parts.append(f'<text x="{x:.2f}" y="{y:.2f}" font-size="10" text-anchor="end" {FONT} '
                     f'transform="rotate(-60 {x:.2f} {y:.2f})">{escape(str(lab))}</text>')
    return _document(width, height, parts, title)


def render_importance(report, title: str = "Variable importance") -> str:
    """Variables (rows, by descending mean importance) against activities."""
    m = report.matrix().T
    return render_heatmap(m, report.ordering, report.activities, title=title, vmin=0.0, vmax=1.0,
                          highlight_diagonal=False, cell=26)


def render_bars(labels: Sequence[str], values: Sequence[float], title: str = "", ylabel: str = "",
                reference: float | None = None) -> str:
    """Vertical bar chart with an optional horizontal reference line."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("no bars to render")
    n = len(labels)
    bar = 22
    width = max(480, 70 + n * (bar + 6) + 20)
    top_v = max(float(np.nanmax(values)), reference or 0.0, 1e-3)
    c = Canvas((0, n), (0.0, top_v), width=width, height=420, margin=(30, 20, 150, 60), title=title)
    c.axes("", ylabel)
    for i, v in enumerate(values):
        x = c.px(i + 0.5) - bar / 2
        y = c.py(v)
        c.parts.append(f'<rect x="{_f(x)}" y="{_f(y)}" width="{bar}" height="{_f(c.py(0) - y)}" fill="{PALETTE[0]}"/>')
        lx, ly = c.px(i + 0.5), c.top + c.ph + 12
        c.parts.append(f'<text x="{_f(lx)}" y="{_f(ly)}" font-size="9" text-anchor="end" {FONT} '
                       f'transform="rotate(-60 {_f(lx)} {_f(ly)})">{escape(str(labels[i]))}</text>')
    if reference is not None:
        c.polyline([0, n], [reference, reference], "#555", 1.0, dash="2,3")
    return c.render()


def render_group_sweep(results, title: str = "Normalised Cmxe per group combination") -> str:
    labels = [" + ".join(r.groups) for r in results]
    return render_bars(labels, [r.cmxe_normalized for r in results], title, "normalised Cmxe", reference=1.0)


def render_timeline(timeline, title: str = "") -> str:
    """Stacked per-minute class likelihoods with predicted and true class strips."""
    lik = np.asarray(timeline.likelihoods, dtype=float)
    T, G = lik.shape
    if T == 0:
        raise ValueError("empty timeline")
    cell = max(8, min(24, 600 // T))
    left, top, band = 100, 40, 160
    width = left + T * cell + 150
    height = top + band + 80
    color = {g: PALETTE[i % len(PALETTE)] for i, g in enumerate(timeline.classes)}
    parts = []
    for t in range(T):
        y = top + band
        for g in range(G):
            h = lik[t, g] * band
            y -= h
            parts.append(f'<rect x="{left + t * cell}" y="{y:.2f}" width="{cell}" height="{h:.2f}" '
                         f'fill="{color[timeline.classes[g]]}"/>')
        parts.append(f'<rect x="{left + t * cell}" y="{top + band + 8}" width="{cell}" height="12" '
                     f'fill="{color[timeline.predicted[t]]}" stroke="white"/>')
        if timeline.truth is not None:
            tr = timeline.truth[t]
            fill = color.get(tr, "#dddddd") if tr is not None else "#dddddd"
            parts.append(f'<rect x="{left + t * cell}" y="{top + band + 24}" width="{cell}" height="12" '
                         f'fill="{fill}" stroke="white"/>')
    parts.append(f'<text x="{left - 6}" y="{top + band / 2:.2f}" font-size="10" text-anchor="end" {FONT}>likelihood</text>')
    parts.append(f'<text x="{left - 6}" y="{top + band + 18}" font-size="10" text-anchor="end" {FONT}>predicted</text>')
    if timeline.truth is not None:
        parts.append(f'<text x="{left - 6}" y="{top + band + 34}" font-size="10" text-anchor="end" {FONT}>truth</text>')
    for i, g in enumerate(timeline.classes):
        y = top + 10 + 16 * i
        x = left + T * cell + 14
        parts.append(f'<rect x="{x}" y="{y - 9}" width="10" height="10" fill="{color[g]}"/>')
        parts.append(f'<text x="{x + 14}" y="{y}" font-size="10" text-anchor="start" {FONT}>{escape(str(g))}</text>')
    parts.append(f'<text x="{left + T * cell / 2:.2f}" y="{height - 12}" font-size="11" text-anchor="middle" {FONT}>minute</text>')
    return _document(width, height, parts, title)
