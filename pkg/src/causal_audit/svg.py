"""Tiny dependency-free SVG charts: line chart, overlaid histogram, forest plot.

Output is a pure function of the inputs (fixed number formatting) so figures
are byte-stable across runs.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
MARGIN = dict(left=110, right=160, top=40, bottom=55)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(x: float) -> str:
    return f"{x:.2f}"


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if not (math.isfinite(lo) and math.isfinite(hi)):
        return []
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-12 * step:
        ticks.append(round(v, 12))
        v += step
    return ticks


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str, xlim, ylim):
        self.parts: list[str] = []
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        self.pw = WIDTH - MARGIN["left"] - MARGIN["right"]
        self.ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]
        self.title, self.xlabel, self.ylabel = title, xlabel, ylabel

    def sx(self, x: float) -> float:
        return MARGIN["left"] + (x - self.x0) / (self.x1 - self.x0) * self.pw

    def sy(self, y: float) -> float:
        return MARGIN["top"] + (1 - (y - self.y0) / (self.y1 - self.y0)) * self.ph

    def add(self, s: str) -> None:
        self.parts.append(s)

    def axes(self, xticks=None, yticks=None, xticklabels=None, yticklabels=None) -> None:
        L, T = MARGIN["left"], MARGIN["top"]
        self.add(f'<rect x="{L}" y="{T}" width="{self.pw}" height="{self.ph}" fill="none" stroke="#333"/>')
        xticks = _nice_ticks(self.x0, self.x1) if xticks is None else xticks
        yticks = _nice_ticks(self.y0, self.y1) if yticks is None else yticks
        for i, v in enumerate(xticks):
            x = self.sx(v)
            lab = xticklabels[i] if xticklabels else f"{v:g}"
            self.add(f'<line x1="{_f(x)}" y1="{T + self.ph}" x2="{_f(x)}" y2="{T + self.ph + 5}" stroke="#333"/>')
            self.add(f'<text x="{_f(x)}" y="{T + self.ph + 18}" font-size="11" text-anchor="middle">{escape(lab)}</text>')
        for i, v in enumerate(yticks):
            y = self.sy(v)
            lab = yticklabels[i] if yticklabels else f"{v:g}"
            self.add(f'<line x1="{L - 5}" y1="{_f(y)}" x2="{L}" y2="{_f(y)}" stroke="#333"/>')
            self.add(f'<text x="{L - 8}" y="{_f(y + 4)}" font-size="11" text-anchor="end">{escape(lab)}</text>')
        self.add(f'<text x="{WIDTH / 2:.1f}" y="22" font-size="14" text-anchor="middle">{escape(self.title)}</text>')
        self.add(f'<text x="{L + self.pw / 2:.1f}" y="{HEIGHT - 12}" font-size="12" '
                 f'text-anchor="middle">{escape(self.xlabel)}</text>')
        cy = T + self.ph / 2
        self.add(f'<text x="16" y="{cy:.1f}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 16 {cy:.1f})">{escape(self.ylabel)}</text>')

    def legend(self, names) -> None:
        x = WIDTH - MARGIN["right"] + 12
        for i, name in enumerate(names):
            y = MARGIN["top"] + 10 + 18 * i
            c = PALETTE[i % len(PALETTE)]
            self.add(f'<rect x="{x}" y="{y - 8}" width="12" height="10" fill="{c}"/>')
            self.add(f'<text x="{x + 18}" y="{y + 1}" font-size="11">{escape(name)}</text>')

    def render(self) -> str:
        body = "\n".join(self.parts)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
                f'viewBox="0 0 {WIDTH} {HEIGHT}">\n<rect width="100%" height="100%" fill="white"/>\n'
                f"{body}\n</svg>\n")


def _finite(vals):
    return [v for v in vals if v is not None and math.isfinite(v)]


def line_chart(series: dict, title: str, xlabel: str, ylabel: str, hline: float | None = None) -> str:
    """``series`` maps a legend name to a list of (x, y) points; None y values break the line."""
    xs = _finite([x for pts in series.values() for x, _ in pts])
    ys = _finite([y for pts in series.values() for _, y in pts])
    if hline is not None:
        ys.append(hline)
    xlo, xhi = (min(xs), max(xs)) if xs else (0.0, 1.0)
    ylo, yhi = (min(ys), max(ys)) if ys else (0.0, 1.0)
    pad = 0.05 * (yhi - ylo or 1.0)
    cv = _Canvas(title, xlabel, ylabel, (xlo, xhi), (ylo - pad, yhi + pad))
    cv.axes()
    if hline is not None:
        y = cv.sy(hline)
        cv.add(f'<line x1="{cv.sx(cv.x0):.2f}" y1="{_f(y)}" x2="{cv.sx(cv.x1):.2f}" y2="{_f(y)}" '
               f'stroke="#999" stroke-dasharray="4 3"/>')
    for i, (name, pts) in enumerate(series.items()):
        c = PALETTE[i % len(PALETTE)]
        seg: list[str] = []
        for x, yv in pts:
            if yv is None or not math.isfinite(yv):
                if len(seg) > 1:
                    cv.add(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{" ".join(seg)}"/>')
                seg = []
                continue
            seg.append(f"{_f(cv.sx(x))},{_f(cv.sy(yv))}")
            cv.add(f'<circle cx="{_f(cv.sx(x))}" cy="{_f(cv.sy(yv))}" r="3" fill="{c}"/>')
        if len(seg) > 1:
            cv.add(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{" ".join(seg)}"/>')
    cv.legend(list(series))
    return cv.render()


def histogram(densities: dict, edges, title: str, xlabel: str) -> str:
    """Overlaid density histograms, one translucent layer per group, on shared bin ``edges``."""
    edges = list(edges)
    ymax = max((max(d) for d in densities.values() if len(d)), default=1.0) or 1.0
    cv = _Canvas(title, xlabel, "density", (edges[0], edges[-1]), (0.0, ymax * 1.05))
    cv.axes()
    for i, (name, d) in enumerate(densities.items()):
        c = PALETTE[i % len(PALETTE)]
        for k, h in enumerate(d):
            if not h or h <= 0:
                continue
            x = cv.sx(edges[k])
            w = cv.sx(edges[k + 1]) - x
            y = cv.sy(h)
            cv.add(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(cv.sy(0) - y)}" '
                   f'fill="{c}" fill-opacity="0.45" stroke="{c}"/>')
    cv.legend(list(densities))
    return cv.render()


def forest_plot(rows, title: str, xlabel: str = "ATE (outcome rank units)") -> str:
    """``rows``: list of (label, estimate, ci_low, ci_high); non-finite rows are listed without marks."""
    vals = _finite([v for _, a, lo, hi in rows for v in (a, lo, hi)]) + [0.0]
    lo, hi = min(vals), max(vals)
    pad = 0.1 * (hi - lo or 1.0)
    n = max(1, len(rows))
    cv = _Canvas(title, xlabel, "", (lo - pad, hi + pad), (0.0, n + 1.0))
    yt = [n - i for i in range(len(rows))]
    cv.axes(yticks=yt, yticklabels=[r[0] for r in rows])
    x0 = cv.sx(0.0)
    cv.add(f'<line x1="{_f(x0)}" y1="{MARGIN["top"]}" x2="{_f(x0)}" y2="{MARGIN["top"] + cv.ph}" '
           f'stroke="#999" stroke-dasharray="4 3"/>')
    for (label, a, l, h), yv in zip(rows, yt):
        y = cv.sy(yv)
        if l is not None and h is not None and math.isfinite(l) and math.isfinite(h):
            cv.add(f'<line x1="{_f(cv.sx(l))}" y1="{_f(y)}" x2="{_f(cv.sx(h))}" y2="{_f(y)}" '
                   f'stroke="{PALETTE[0]}" stroke-width="2"/>')
        if a is not None and math.isfinite(a):
            cv.add(f'<rect x="{_f(cv.sx(a) - 4)}" y="{_f(y - 4)}" width="8" height="8" fill="{PALETTE[1]}"/>')
    return cv.render()
