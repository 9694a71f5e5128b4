"""Summary tables and standalone SVG plots for the experiment harness.

The SVG writer is deliberately minimal and fully deterministic: regenerating
a report from the same CSV inputs must reproduce every output byte for byte.
"""

from __future__ import annotations

import math
from pathlib import Path

PALETTE = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]

_W, _H = 640, 440
_L, _R, _T, _B = 70, 610, 45, 385


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def svg_line_plot(
    path,
    series: list[dict],
    title: str,
    xlabel: str,
    ylabel: str,
    x_log: bool = False,
) -> None:
    """Write a line plot; each series is {label, x, y} with numeric lists."""
    xs_all, ys_all = [], []
    for s in series:
        xs = [math.log10(v) for v in s["x"]] if x_log else list(s["x"])
        xs_all += xs
        ys_all += list(s["y"])
    if not xs_all:
        xs_all, ys_all = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs_all), max(xs_all)
    y_lo, y_hi = min(ys_all), max(ys_all)
    if x_hi == x_lo:
        x_lo, x_hi = x_lo - 0.5, x_hi + 0.5
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 0.5, y_hi + 0.5
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(v):
        return _L + (v - x_lo) / (x_hi - x_lo) * (_R - _L)

    def py(v):
        return _B - (v - y_lo) / (y_hi - y_lo) * (_B - _T)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W // 2}" y="24" font-family="sans-serif" font-size="15" '
        f'text-anchor="middle">{title}</text>',
    ]
    # Axes and ticks.
    out.append(
        f'<rect x="{_L}" y="{_T}" width="{_R - _L}" height="{_B - _T}" fill="none" '
        f'stroke="#333333" stroke-width="1"/>'
    )
    for tx in _ticks(x_lo, x_hi):
        label = f"{10 ** tx:.4g}" if x_log else f"{tx:.4g}"
        out.append(
            f'<line x1="{_fmt(px(tx))}" y1="{_B}" x2="{_fmt(px(tx))}" y2="{_B + 5}" '
            f'stroke="#333333"/>'
        )
        out.append(
            f'<text x="{_fmt(px(tx))}" y="{_B + 20}" font-family="sans-serif" '
            f'font-size="11" text-anchor="middle">{label}</text>'
        )
    for ty in _ticks(y_lo, y_hi):
        out.append(
            f'<line x1="{_L - 5}" y1="{_fmt(py(ty))}" x2="{_L}" y2="{_fmt(py(ty))}" '
            f'stroke="#333333"/>'
        )
        out.append(
            f'<text x="{_L - 8}" y="{_fmt(py(ty) + 4)}" font-family="sans-serif" '
            f'font-size="11" text-anchor="end">{ty:.4g}</text>'
        )
    out.append(
        f'<text x="{(_L + _R) // 2}" y="{_H - 8}" font-family="sans-serif" '
        f'font-size="13" text-anchor="middle">{xlabel}</text>'
    )
    out.append(
        f'<text x="16" y="{(_T + _B) // 2}" font-family="sans-serif" font-size="13" '
        f'text-anchor="middle" transform="rotate(-90 16 {(_T + _B) // 2})">{ylabel}</text>'
    )
    # Series.
    for i, s in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        xs = [math.log10(v) for v in s["x"]] if x_log else list(s["x"])
        pts = " ".join(f"{_fmt(px(x))},{_fmt(py(y))}" for x, y in zip(xs, s["y"]))
        out.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        if len(xs) <= 40:
            for x, y in zip(xs, s["y"]):
                out.append(
                    f'<circle cx="{_fmt(px(x))}" cy="{_fmt(py(y))}" r="3" fill="{color}"/>'
                )
        out.append(
            f'<line x1="{_R - 150}" y1="{_T + 14 + 16 * i}" x2="{_R - 126}" '
            f'y2="{_T + 14 + 16 * i}" stroke="{color}" stroke-width="2"/>'
        )
        out.append(
            f'<text x="{_R - 120}" y="{_T + 18 + 16 * i}" font-family="sans-serif" '
            f'font-size="11">{s["label"]}</text>'
        )
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def write_csv(path, header: list[str], rows: list[list]) -> None:
    """CSV with repr-exact floats so regeneration is byte-stable."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(
            ",".join(repr(float(v)) if isinstance(v, float) else str(v) for v in row)
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    return header, [line.split(",") for line in lines[1:]]
