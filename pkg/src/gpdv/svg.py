"""Minimal SVG charts: valuation bars, removal curves, IV traces.

Strings in, strings out; no plotting dependency.  Layout is fixed-size
with margins for axis labels and an optional legend on the right.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InputError

WIDTH = 720
HEIGHT = 440
MARGIN_L = 64
MARGIN_R = 150
MARGIN_T = 40
MARGIN_B = 52

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd",
    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f",
)


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _nice_ticks(lo: float, hi: float, target: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    raw = span / max(1, target)
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * mag
        if span / step <= target + 1:
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-9 * span:
        ticks.append(0.0 if abs(t) < 1e-12 * span else t)
        t += step
    return ticks


class _Frame:
    """Coordinate frame mapping data space to the plot rectangle."""

    def __init__(self, xlo, xhi, ylo, yhi):
        if xhi <= xlo:
            xhi = xlo + 1.0
        if yhi <= ylo:
            pad = 1.0 if yhi == ylo == 0 else abs(yhi) * 0.1 + 1e-12
            ylo, yhi = ylo - pad, yhi + pad
        self.xlo, self.xhi = xlo, xhi
        self.ylo, self.yhi = ylo, yhi
        self.px0, self.px1 = MARGIN_L, WIDTH - MARGIN_R
        self.py0, self.py1 = HEIGHT - MARGIN_B, MARGIN_T

    def x(self, v: float) -> float:
        t = (v - self.xlo) / (self.xhi - self.xlo)
        return self.px0 + t * (self.px1 - self.px0)

    def y(self, v: float) -> float:
        t = (v - self.ylo) / (self.yhi - self.ylo)
        return self.py0 + t * (self.py1 - self.py0)


def _chrome(frame: _Frame, title: str, xlabel: str, ylabel: str) -> list[str]:
    out = [
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" '
        f'font-size="15" font-family="sans-serif">{title}</text>',
    ]
    # axes
    out.append(
        f'<line x1="{frame.px0}" y1="{frame.py0}" x2="{frame.px1}" '
        f'y2="{frame.py0}" stroke="black" stroke-width="1"/>'
    )
    out.append(
        f'<line x1="{frame.px0}" y1="{frame.py0}" x2="{frame.px0}" '
        f'y2="{frame.py1}" stroke="black" stroke-width="1"/>'
    )
    for t in _nice_ticks(frame.xlo, frame.xhi):
        px = frame.x(t)
        out.append(
            f'<line x1="{px:.2f}" y1="{frame.py0}" x2="{px:.2f}" '
            f'y2="{frame.py0 + 5}" stroke="black" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{px:.2f}" y="{frame.py0 + 20}" text-anchor="middle" '
            f'font-size="11" font-family="sans-serif">{_fmt(t)}</text>'
        )
    for t in _nice_ticks(frame.ylo, frame.yhi):
        py = frame.y(t)
        out.append(
            f'<line x1="{frame.px0 - 5}" y1="{py:.2f}" x2="{frame.px0}" '
            f'y2="{py:.2f}" stroke="black" stroke-width="1"/>'
        )
        out.append(
            f'<text x="{frame.px0 - 8}" y="{py + 4:.2f}" text-anchor="end" '
            f'font-size="11" font-family="sans-serif">{_fmt(t)}</text>'
        )
        out.append(
            f'<line x1="{frame.px0}" y1="{py:.2f}" x2="{frame.px1}" '
            f'y2="{py:.2f}" stroke="#dddddd" stroke-width="0.5"/>'
        )
    out.append(
        f'<text x="{(frame.px0 + frame.px1) // 2}" y="{HEIGHT - 14}" '
        f'text-anchor="middle" font-size="12" font-family="sans-serif">{xlabel}</text>'
    )
    out.append(
        f'<text x="18" y="{(frame.py0 + frame.py1) // 2}" text-anchor="middle" '
        f'font-size="12" font-family="sans-serif" '
        f'transform="rotate(-90 18 {(frame.py0 + frame.py1) // 2})">{ylabel}</text>'
    )
    return out


def _legend(names: list[str]) -> list[str]:
    out = []
    x0 = WIDTH - MARGIN_R + 12
    for k, name in enumerate(names):
        y = MARGIN_T + 16 + 18 * k
        color = PALETTE[k % len(PALETTE)]
        out.append(
            f'<line x1="{x0}" y1="{y - 4}" x2="{x0 + 22}" y2="{y - 4}" '
            f'stroke="{color}" stroke-width="2.5"/>'
        )
        out.append(
            f'<text x="{x0 + 28}" y="{y}" font-size="12" '
            f'font-family="sans-serif">{name}</text>'
        )
    return out


def _document(body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
        f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">'
    )
    return "\n".join([head, *body, "</svg>"]) + "\n"


def render_bar_chart(
    values,
    std_errors=None,
    title: str = "per-datum values",
    xlabel: str = "training index",
    ylabel: str = "value",
) -> str:
    """Bars by index with optional +-2 SE whiskers."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise InputError("nothing to plot: empty value vector")
    se = (
        np.zeros_like(v)
        if std_errors is None
        else np.asarray(std_errors, dtype=float).reshape(-1)
    )
    if se.shape != v.shape:
        raise InputError("std_errors length does not match values")
    ylo = min(0.0, float((v - 2 * se).min()))
    yhi = max(0.0, float((v + 2 * se).max()))
    frame = _Frame(-0.5, v.size - 0.5, ylo, yhi)
    body = _chrome(frame, title, xlabel, ylabel)
    y0 = frame.y(0.0)
    slot = (frame.px1 - frame.px0) / v.size
    bw = max(1.0, slot * 0.8)
    for i, val in enumerate(v):
        px = frame.x(float(i)) - bw / 2
        py = frame.y(val)
        top, height = (py, y0 - py) if val >= 0 else (y0, py - y0)
        color = PALETTE[0] if val >= 0 else PALETTE[1]
        body.append(
            f'<rect x="{px:.2f}" y="{top:.2f}" width="{bw:.2f}" '
            f'height="{max(height, 0.0):.2f}" fill="{color}" fill-opacity="0.8"/>'
        )
        if se[i] > 0:
            cx = frame.x(float(i))
            body.append(
                f'<line x1="{cx:.2f}" y1="{frame.y(val - 2 * se[i]):.2f}" '
                f'x2="{cx:.2f}" y2="{frame.y(val + 2 * se[i]):.2f}" '
                f'stroke="black" stroke-width="1"/>'
            )
    return _document(body)


def render_line_chart(
    series,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    reverse_x: bool = False,
) -> str:
    """Polyline per named series; NaN samples break the line."""
    cleaned = []
    for name, xs, ys in series:
        xa = np.asarray(xs, dtype=float).reshape(-1)
        ya = np.asarray(ys, dtype=float).reshape(-1)
        if xa.shape != ya.shape or xa.size == 0:
            raise InputError(f"series {name!r} is empty or mismatched")
        cleaned.append((str(name), xa, ya))
    if not cleaned:
        raise InputError("nothing to plot: no series")
    allx = np.concatenate([xa for _, xa, _ in cleaned])
    ally = np.concatenate([ya for _, _, ya in cleaned])
    finite = ally[np.isfinite(ally)]
    if finite.size == 0:
        raise InputError("nothing to plot: all samples are NaN")
    frame = _Frame(
        float(allx.min()), float(allx.max()), float(finite.min()), float(finite.max())
    )
    if reverse_x:
        frame.xlo, frame.xhi = frame.xhi, frame.xlo
    body = _chrome(frame, title, xlabel, ylabel)
    for k, (name, xa, ya) in enumerate(cleaned):
        color = PALETTE[k % len(PALETTE)]
        run: list[str] = []
        for x, y in zip(xa, ya):
            if not (np.isfinite(x) and np.isfinite(y)):
                if len(run) > 1:
                    body.append(
                        f'<polyline points="{" ".join(run)}" fill="none" '
                        f'stroke="{color}" stroke-width="2"/>'
                    )
                run = []
                continue
            run.append(f"{frame.x(x):.2f},{frame.y(y):.2f}")
        if len(run) > 1:
            body.append(
                f'<polyline points="{" ".join(run)}" fill="none" '
                f'stroke="{color}" stroke-width="2"/>'
            )
        for x, y in zip(xa, ya):
            if np.isfinite(x) and np.isfinite(y):
                body.append(
                    f'<circle cx="{frame.x(x):.2f}" cy="{frame.y(y):.2f}" '
                    f'r="2.5" fill="{color}"/>'
                )
    body.extend(_legend([name for name, _, _ in cleaned]))
    return _document(body)
