"""Minimal SVG line charts (no plotting dependency)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


@dataclass
class Series:
    label: str
    x: list[float]
    y: list[float]
    err: list[float] | None = None
    dashed: bool = False
    markers: bool = False


@dataclass
class Chart:
    title: str
    xlabel: str
    ylabel: str
    logy: bool = False
    series: list[Series] = field(default_factory=list)
    width: int = 640
    height: int = 420

    def add(self, *args, **kwargs) -> "Chart":
        self.series.append(Series(*args, **kwargs))
        return self

    def _ty(self, v):
        if self.logy:
            return math.log10(v) if v > 0 else None
        return v

    def render(self) -> str:
        ml, mr, mt, mb = 70, 150, 40, 50
        pw, ph = self.width - ml - mr, self.height - mt - mb
        xs = [x for s in self.series for x in s.x if math.isfinite(x)]
        ys = []
        for s in self.series:
            for i, y in enumerate(s.y):
                e = s.err[i] if s.err else 0.0
                for v in (y - e, y + e) if e else (y,):
                    tv = self._ty(v) if math.isfinite(v) else None
                    if tv is not None:
                        ys.append(tv)
        x0, x1 = (min(xs), max(xs)) if xs else (0.0, 1.0)
        y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
        if x1 == x0:
            x1 = x0 + 1.0
        if y1 == y0:
            y1 = y0 + 1.0

        def px(x):
            return ml + (x - x0) / (x1 - x0) * pw

        def py(ty):
            return mt + ph - (ty - y0) / (y1 - y0) * ph

        out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
               f'font-family="sans-serif" font-size="12">',
               f'<rect width="{self.width}" height="{self.height}" fill="white"/>',
               f'<text x="{self.width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(self.title)}</text>',
               f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
        for k in range(5):
            fx = x0 + (x1 - x0) * k / 4
            fy = y0 + (y1 - y0) * k / 4
            out.append(f'<text x="{px(fx):.1f}" y="{mt + ph + 16}" text-anchor="middle">{fx:.3g}</text>')
            lab = f"1e{fy:.1f}" if self.logy else f"{fy:.3g}"
            out.append(f'<text x="{ml - 6}" y="{py(fy) + 4:.1f}" text-anchor="end">{lab}</text>')
        out.append(f'<text x="{ml + pw / 2:.1f}" y="{self.height - 10}" text-anchor="middle">{escape(self.xlabel)}</text>')
        out.append(f'<text x="16" y="{mt + ph / 2:.1f}" transform="rotate(-90 16 {mt + ph / 2:.1f})" '
                   f'text-anchor="middle">{escape(self.ylabel)}</text>')
        for n, s in enumerate(self.series):
            col = PALETTE[n % len(PALETTE)]
            pts = []
            for i, (x, y) in enumerate(zip(s.x, s.y)):
                ty = self._ty(y) if math.isfinite(y) else None
                if ty is None or not math.isfinite(x):
                    continue
                pts.append(f"{px(x):.2f},{py(ty):.2f}")
                if s.err and s.err[i]:
                    lo, hi = self._ty(y - s.err[i]), self._ty(y + s.err[i])
                    lo = y0 if lo is None else lo
                    out.append(f'<line x1="{px(x):.2f}" x2="{px(x):.2f}" y1="{py(lo):.2f}" '
                               f'y2="{py(hi):.2f}" stroke="{col}"/>')
                if s.markers:
                    out.append(f'<circle cx="{px(x):.2f}" cy="{py(ty):.2f}" r="2.5" fill="{col}"/>')
            dash = ' stroke-dasharray="5,3"' if s.dashed else ""
            if len(pts) > 1:
                out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5"{dash} points="{" ".join(pts)}"/>')
            ly = mt + 14 + 18 * n
            out.append(f'<line x1="{ml + pw + 10}" x2="{ml + pw + 30}" y1="{ly}" y2="{ly}" stroke="{col}"{dash}/>')
            out.append(f'<text x="{ml + pw + 35}" y="{ly + 4}">{escape(s.label)}</text>')
        out.append("</svg>")
        return "\n".join(out) + "\n"
