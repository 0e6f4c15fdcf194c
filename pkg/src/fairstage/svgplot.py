"""Tiny dependency-free SVG line and scatter charts with byte-stable output."""

from __future__ import annotations

from typing import Mapping, Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 360
MARGIN = dict(left=60, right=20, top=40, bottom=50)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


class _Frame:
    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        self.pw = WIDTH - MARGIN["left"] - MARGIN["right"]
        self.ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def px(self, x: float) -> float:
        return MARGIN["left"] + (x - self.x0) / (self.x1 - self.x0) * self.pw

    def py(self, y: float) -> float:
        return MARGIN["top"] + (1 - (y - self.y0) / (self.y1 - self.y0)) * self.ph


def _limits(values: Sequence[float], pad: float = 0.02) -> tuple[float, float]:
    lo, hi = min(values), max(values)
    span = (hi - lo) or 1.0
    return lo - pad * span, hi + pad * span


def _axes(frame: _Frame, title: str, xlabel: str, ylabel: str) -> list[str]:
    L, T = MARGIN["left"], MARGIN["top"]
    out = [
        f'<rect x="{L}" y="{T}" width="{frame.pw}" height="{frame.ph}" fill="none" stroke="#000"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{WIDTH / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="14" y="{HEIGHT / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {HEIGHT / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for t in _ticks(frame.x0, frame.x1):
        x = frame.px(t)
        out.append(f'<line x1="{_fmt(x)}" y1="{T + frame.ph}" x2="{_fmt(x)}" y2="{T + frame.ph + 5}" stroke="#000"/>')
        out.append(f'<text x="{_fmt(x)}" y="{T + frame.ph + 18}" text-anchor="middle" font-size="10">{t:.3g}</text>')
    for t in _ticks(frame.y0, frame.y1):
        y = frame.py(t)
        out.append(f'<line x1="{L - 5}" y1="{_fmt(y)}" x2="{L}" y2="{_fmt(y)}" stroke="#000"/>')
        out.append(f'<text x="{L - 8}" y="{_fmt(y + 3)}" text-anchor="end" font-size="10">{t:.3g}</text>')
    return out


def _legend(labels: Sequence[str]) -> list[str]:
    out = []
    for i, label in enumerate(labels):
        y = MARGIN["top"] + 12 + 14 * i
        x = MARGIN["left"] + 10
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<line x1="{x}" y1="{y}" x2="{x + 18}" y2="{y}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x + 24}" y="{y + 4}" font-size="10">{escape(label)}</text>')
    return out


def _document(body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">'
    )
    return "\n".join([head, '<rect width="100%" height="100%" fill="#fff"/>', *body, "</svg>"]) + "\n"


def line_chart(
    series: Mapping[str, Sequence[tuple[float, float]]],
    title: str,
    xlabel: str,
    ylabel: str,
    step: bool = False,
    xlim: tuple[float, float] | None = None,
    ylim: tuple[float, float] | None = None,
) -> str:
    """Polylines, one per series; ``step`` draws right-continuous steps (CDFs)."""
    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    frame = _Frame(xlim or _limits(xs), ylim or _limits(ys))
    body = _axes(frame, title, xlabel, ylabel)
    for i, (label, pts) in enumerate(series.items()):
        if not pts:
            continue
        coords = []
        prev_y = None
        for x, y in pts:
            if step and prev_y is not None:
                coords.append((x, prev_y))
            coords.append((x, y))
            prev_y = y
        if step:
            coords.append((frame.x1, prev_y))
        path = " ".join(f"{_fmt(frame.px(x))},{_fmt(frame.py(y))}" for x, y in coords)
        color = PALETTE[i % len(PALETTE)]
        body.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
    body += _legend(list(series))
    return _document(body)


def scatter_chart(
    points: Sequence[tuple[float, float]],
    title: str,
    xlabel: str,
    ylabel: str,
    diagonal: bool = False,
) -> str:
    xs = [p[0] for p in points] or [0.0]
    ys = [p[1] for p in points] or [0.0]
    if diagonal:
        lo, hi = _limits(xs + ys)
        frame = _Frame((lo, hi), (lo, hi))
    else:
        frame = _Frame(_limits(xs), _limits(ys))
    body = _axes(frame, title, xlabel, ylabel)
    if diagonal:
        body.append(
            f'<line x1="{_fmt(frame.px(frame.x0))}" y1="{_fmt(frame.py(frame.y0))}" '
            f'x2="{_fmt(frame.px(frame.x1))}" y2="{_fmt(frame.py(frame.y1))}" '
            'stroke="#d62728" stroke-dasharray="4 3"/>'
        )
    for x, y in points:
        body.append(
            f'<circle cx="{_fmt(frame.px(x))}" cy="{_fmt(frame.py(y))}" r="2" '
            'fill="#1f77b4" fill-opacity="0.5"/>'
        )
    return _document(body)
