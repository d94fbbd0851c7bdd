"""Minimal SVG line plots with axes, for diagnostic figures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b")


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    markers: bool = False
    dashed: bool = False
    line: bool = True


@dataclass
class Plot:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    logx: bool = False
    logy: bool = False
    width: int = 640
    height: int = 440
    series: list[Series] = field(default_factory=list)

    def add(self, x, y, label="", markers=False, dashed=False, line=True) -> "Plot":
        self.series.append(Series(np.asarray(x, float), np.asarray(y, float), label, markers, dashed, line))
        return self

    def _tx(self, v, log):
        v = np.asarray(v, float)
        if log:
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(v > 0, np.log10(np.where(v > 0, v, 1.0)), np.nan)
        return v

    def render(self) -> str:
        ml, mr, mt, mb = 70, 20, 36, 50
        pw, ph = self.width - ml - mr, self.height - mt - mb
        xs = [self._tx(s.x, self.logx) for s in self.series]
        ys = [self._tx(s.y, self.logy) for s in self.series]
        allx = np.concatenate([a[np.isfinite(a)] for a in xs] or [np.array([0.0, 1.0])])
        ally = np.concatenate([a[np.isfinite(a)] for a in ys] or [np.array([0.0, 1.0])])
        if allx.size == 0:
            allx = np.array([0.0, 1.0])
        if ally.size == 0:
            ally = np.array([0.0, 1.0])
        x0, x1 = _pad_range(allx.min(), allx.max())
        y0, y1 = _pad_range(ally.min(), ally.max())
        X = lambda v: ml + (v - x0) / (x1 - x0) * pw
        Y = lambda v: mt + ph - (v - y0) / (y1 - y0) * ph
        out = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
            f'font-family="sans-serif" font-size="11">',
            f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
            f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        ]
        for t in _ticks(x0, x1):
            out.append(f'<line x1="{X(t):.2f}" y1="{mt + ph}" x2="{X(t):.2f}" y2="{mt + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{X(t):.2f}" y="{mt + ph + 16}" text-anchor="middle">'
                       f'{_fmt(t, self.logx)}</text>')
        for t in _ticks(y0, y1):
            out.append(f'<line x1="{ml - 4}" y1="{Y(t):.2f}" x2="{ml}" y2="{Y(t):.2f}" stroke="black"/>')
            out.append(f'<text x="{ml - 6}" y="{Y(t) + 4:.2f}" text-anchor="end">'
                       f'{_fmt(t, self.logy)}</text>')
        out.append(f'<text x="{ml + pw / 2}" y="{self.height - 12}" text-anchor="middle">'
                   f'{escape(self.xlabel)}</text>')
        out.append(f'<text x="16" y="{mt + ph / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 16 {mt + ph / 2})">{escape(self.ylabel)}</text>')
        out.append(f'<text x="{ml + pw / 2}" y="22" text-anchor="middle" font-size="13">'
                   f'{escape(self.title)}</text>')
        for k, (s, sx, sy) in enumerate(zip(self.series, xs, ys)):
            color = PALETTE[k % len(PALETTE)]
            dash = ' stroke-dasharray="5,3"' if s.dashed else ""
            for seg in (_segments(sx, sy) if s.line else ()):
                pts = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in seg)
                out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
            if s.markers:
                for a, b in zip(sx, sy):
                    if np.isfinite(a) and np.isfinite(b):
                        out.append(f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="2.5" fill="{color}"/>')
            if s.label:
                ly = mt + 14 + 14 * k
                out.append(f'<line x1="{ml + pw - 110}" y1="{ly - 4}" x2="{ml + pw - 90}" y2="{ly - 4}" '
                           f'stroke="{color}" stroke-width="2"{dash}/>')
                out.append(f'<text x="{ml + pw - 86}" y="{ly}">{escape(s.label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())


def _pad_range(lo, hi):
    if not hi > lo:
        d = max(abs(lo), 1.0) * 0.5
        return lo - d, hi + d
    d = 0.04 * (hi - lo)
    return lo - d, hi + d


def _ticks(lo, hi, target=6):
    raw = (hi - lo) / target
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + i * step for i in range(int((hi - start) / step) + 1)]


def _fmt(t, log):
    if log:
        return f"1e{t:g}" if float(t).is_integer() else f"{10 ** t:.3g}"
    return f"{t:.4g}"


def _segments(x, y):
    seg = []
    for a, b in zip(x, y):
        if np.isfinite(a) and np.isfinite(b):
            seg.append((a, b))
        elif seg:
            yield seg
            seg = []
    if len(seg) > 1:
        yield seg
