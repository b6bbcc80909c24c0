"""Minimal SVG output: line plots and color grids, no plotting dependency."""

from __future__ import annotations

from pathlib import Path

import numpy as np

W, H, PAD = 480, 320, 40
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#7f7f7f", "#9467bd")


def _fmt(v: float) -> str:
    return f"{v:.4g}"


def _frame(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="16" text-anchor="middle" font-size="12">{title}</text>',
    ]


def line_plot(path, x, series: dict, title: str = "") -> Path:
    """Polylines of each named series against x; non-finite points break the line."""
    x = np.asarray(x, dtype=float)
    ys = {k: np.asarray(v, dtype=float) for k, v in series.items()}
    finite = np.concatenate([v[np.isfinite(v)] for v in ys.values()] + [np.zeros(0)])
    x0, x1 = float(np.min(x)), float(np.max(x))
    y0, y1 = (float(finite.min()), float(finite.max())) if finite.size else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(v):
        return PAD + (v - x0) / (x1 - x0) * (W - 2 * PAD)

    def py(v):
        return H - PAD - (v - y0) / (y1 - y0) * (H - 2 * PAD)

    out = _frame(title)
    out.append(f'<rect x="{PAD}" y="{PAD}" width="{W - 2 * PAD}" height="{H - 2 * PAD}" fill="none" stroke="black"/>')
    for v, anchor, xx, yy in ((x0, "start", PAD, H - PAD + 14), (x1, "end", W - PAD, H - PAD + 14)):
        out.append(f'<text x="{xx}" y="{yy}" text-anchor="{anchor}" font-size="10">{_fmt(v)}</text>')
    for v, yy in ((y0, H - PAD), (y1, PAD + 10)):
        out.append(f'<text x="{PAD - 4}" y="{yy}" text-anchor="end" font-size="10">{_fmt(v)}</text>')
    for i, (name, y) in enumerate(ys.items()):
        color = COLORS[i % len(COLORS)]
        seg = []
        for a, b in zip(x, y):
            if np.isfinite(b):
                seg.append(f"{px(a):.2f},{py(b):.2f}")
            elif seg:
                out.append(f'<polyline fill="none" stroke="{color}" points="{" ".join(seg)}"/>')
                seg = []
        if seg:
            out.append(f'<polyline fill="none" stroke="{color}" points="{" ".join(seg)}"/>')
        out.append(f'<text x="{W - PAD}" y="{PAD + 12 * (i + 1)}" text-anchor="end" font-size="10" fill="{color}">{name}</text>')
    out.append("</svg>")
    return _write(path, out)


def heat_grid(path, values, title: str = "") -> Path:
    """Pixel grid of a 2-D array (rows drawn top to bottom), blue low to red high."""
    v = np.asarray(values, dtype=float)
    ny, nx = v.shape
    ok = np.isfinite(v)
    lo, hi = (float(v[ok].min()), float(v[ok].max())) if ok.any() else (0.0, 1.0)
    span = hi - lo if hi > lo else 1.0
    cw, ch = (W - 2 * PAD) / nx, (H - 2 * PAD) / ny
    out = _frame(title)
    for i in range(ny):
        for j in range(nx):
            if ok[i, j]:
                s = (v[i, j] - lo) / span
                fill = f"rgb({int(255 * s)},0,{int(255 * (1 - s))})"
            else:
                fill = "#cccccc"
            out.append(f'<rect x="{PAD + j * cw:.2f}" y="{PAD + i * ch:.2f}" width="{cw:.2f}" height="{ch:.2f}" fill="{fill}"/>')
    out.append(f'<text x="{PAD}" y="{H - PAD + 14}" font-size="10">min {_fmt(lo)}  max {_fmt(hi)}</text>')
    out.append("</svg>")
    return _write(path, out)


def _write(path, lines) -> Path:
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path
