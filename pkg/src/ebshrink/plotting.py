"""Static SVG line charts, written by hand (no renderer dependency)."""

from __future__ import annotations

from typing import Mapping, Sequence
from xml.sax.saxutils import escape

import numpy as np

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def line_panel(x, series: Mapping[str, Sequence[float]], title: str, width=520, height=300,
               x0=0, y0=0, xlabel="y") -> str:
    x = np.asarray(x, float)
    ys = {k: np.asarray(v, float) for k, v in series.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()]) if ys else np.zeros(1)
    lo, hi = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    ml, mr, mt, mb = 56, 12, 28, 36
    pw, ph = width - ml - mr, height - mt - mb

    def px(v):
        return x0 + ml + (v - x.min()) / (x.max() - x.min()) * pw

    def py(v):
        return y0 + mt + (hi - v) / (hi - lo) * ph

    out = [
        f'<rect x="{x0 + ml}" y="{y0 + mt}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
        f'<text x="{x0 + width / 2}" y="{y0 + 18}" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<text x="{x0 + ml}" y="{y0 + height - 20}" font-size="11">{_fmt(x.min())}</text>',
        f'<text x="{x0 + ml + pw}" y="{y0 + height - 20}" font-size="11" text-anchor="end">{_fmt(x.max())}</text>',
        f'<text x="{x0 + ml + pw / 2}" y="{y0 + height - 6}" font-size="11" text-anchor="middle">{escape(xlabel)}</text>',
        f'<text x="{x0 + ml - 4}" y="{y0 + mt + 10}" font-size="11" text-anchor="end">{_fmt(hi)}</text>',
        f'<text x="{x0 + ml - 4}" y="{y0 + mt + ph}" font-size="11" text-anchor="end">{_fmt(lo)}</text>',
    ]
    if lo < 0 < hi:
        out.append(f'<line x1="{x0 + ml}" x2="{x0 + ml + pw}" y1="{py(0):.2f}" y2="{py(0):.2f}" stroke="#bbb" stroke-dasharray="4 3"/>')
    for i, (name, v) in enumerate(ys.items()):
        color = _COLORS[i % len(_COLORS)]
        ok = np.isfinite(v)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], v[ok]))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{x0 + ml + 8}" y="{y0 + mt + 16 + 14 * i}" font-size="11" fill="{color}">{escape(name)}</text>')
    return "\n".join(out)


def svg_document(panels: Sequence[tuple], width=520, panel_height=300) -> str:
    """``panels``: ``(x, {name: values}, title)`` tuples stacked vertically."""
    height = panel_height * len(panels)
    body = [line_panel(x, s, t, width, panel_height, 0, i * panel_height) for i, (x, s, t) in enumerate(panels)]
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
        + "\n".join(body)
        + "\n</svg>\n"
    )
