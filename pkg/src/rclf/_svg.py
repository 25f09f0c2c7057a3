"""Minimal SVG line plots by direct path emission.

Plots are conveniences next to the canonical CSV output, so this stays
deliberately small: stacked panels sharing a time axis, one polyline per
panel, min/max tick labels. No external plotting dependency.
"""

from __future__ import annotations

import numpy as np

__all__ = ["stacked_line_svg", "write_svg"]

_PANEL_W = 640
_PANEL_H = 150
_MARGIN_L = 64
_MARGIN_R = 16
_MARGIN_V = 28
_COLORS = ("#1a6fb5", "#b5481a", "#3c8a3c", "#7a4ab5", "#a0a01e")


def _fmt_tick(v: float) -> str:
    return format(float(v), ".5g")


def stacked_line_svg(panels) -> str:
    """Render panels [(label, times, values), ...] into one SVG document.

    Each panel gets its own vertical scale (padded 5 percent; constant
    series get a unit band), all share the time extent of the first panel.
    """
    if not panels:
        raise ValueError("need at least one panel")
    total_h = len(panels) * (_PANEL_H + _MARGIN_V) + _MARGIN_V
    total_w = _MARGIN_L + _PANEL_W + _MARGIN_R
    t0 = float(np.min(np.asarray(panels[0][1], dtype=float)))
    t1 = float(np.max(np.asarray(panels[0][1], dtype=float)))
    if t1 <= t0:
        t1 = t0 + 1.0

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" '
        f'height="{total_h}" viewBox="0 0 {total_w} {total_h}" '
        'font-family="monospace" font-size="11">',
        f'<rect width="{total_w}" height="{total_h}" fill="white"/>',
    ]
    for p, (label, times, values) in enumerate(panels):
        t = np.asarray(times, dtype=float)
        y = np.asarray(values, dtype=float)
        if t.size != y.size or t.size < 2:
            raise ValueError(f"panel {label!r} needs matching arrays of >= 2 points")
        ylo = float(np.min(y))
        yhi = float(np.max(y))
        if yhi <= ylo:
            ylo -= 0.5
            yhi += 0.5
        pad = 0.05 * (yhi - ylo)
        ylo -= pad
        yhi += pad

        top = _MARGIN_V + p * (_PANEL_H + _MARGIN_V)
        px = _MARGIN_L + (t - t0) / (t1 - t0) * _PANEL_W
        py = top + (yhi - y) / (yhi - ylo) * _PANEL_H
        color = _COLORS[p % len(_COLORS)]

        parts.append(
            f'<rect x="{_MARGIN_L}" y="{top}" width="{_PANEL_W}" '
            f'height="{_PANEL_H}" fill="none" stroke="#777"/>'
        )
        # Decimate long series: SVG precision beyond one point per pixel
        # buys nothing and bloats the file.
        if px.size > 2 * _PANEL_W:
            idx = np.unique(
                np.concatenate(
                    [
                        np.linspace(0, px.size - 1, 2 * _PANEL_W).astype(int),
                        [0, px.size - 1],
                    ]
                )
            )
            px, py = px[idx], py[idx]
        pts = " ".join(f"{x:.2f},{v:.2f}" for x, v in zip(px, py))
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            'stroke-width="1.2"/>'
        )
        parts.append(
            f'<text x="{_MARGIN_L + 6}" y="{top + 14}" fill="{color}">'
            f"{label}</text>"
        )
        parts.append(
            f'<text x="{_MARGIN_L - 6}" y="{top + 10}" text-anchor="end">'
            f"{_fmt_tick(yhi)}</text>"
        )
        parts.append(
            f'<text x="{_MARGIN_L - 6}" y="{top + _PANEL_H}" text-anchor="end">'
            f"{_fmt_tick(ylo)}</text>"
        )
    bottom = total_h - _MARGIN_V + 16
    parts.append(f'<text x="{_MARGIN_L}" y="{bottom}">t = {_fmt_tick(t0)}</text>')
    parts.append(
        f'<text x="{_MARGIN_L + _PANEL_W}" y="{bottom}" text-anchor="end">'
        f"t = {_fmt_tick(t1)}</text>"
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(path, panels) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(stacked_line_svg(panels))
