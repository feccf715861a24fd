"""Table formatting and SVG trace charts."""

from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
from scipy import stats


def stars(p: float) -> str:
    """``***`` p<0.01, ``**`` p<0.05, ``*`` p<0.1 (strict inequalities)."""
    if not np.isfinite(p):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


def format_number(x: float) -> str:
    """Three significant digits, never fewer than three decimals."""
    if not np.isfinite(x):
        return ""
    if x == 0:
        return "0.000"
    decimals = max(3, 2 - math.floor(math.log10(abs(x))))
    s = f"{x:.{decimals}f}"
    return s.lstrip("-") if float(s) == 0 else s


def format_estimate(coef: float, se: float, p: float | None = None) -> str:
    """Render ``coef`` with significance stars and ``se`` in parentheses, e.g. ``1.087** (0.492)``.

    ``p`` defaults to the two-sided normal p-value of ``coef/se``.  Missing
    estimates render as an empty cell.
    """
    if not (np.isfinite(coef) and np.isfinite(se)):
        return ""
    if p is None:
        p = 2 * stats.norm.sf(abs(coef / se)) if se > 0 else 0.0
    return f"{format_number(coef)}{stars(p)} ({format_number(se)})"


def csv_text(header, rows) -> str:
    """Minimal deterministic CSV writer (cells are quoted only when needed)."""

    def cell(v) -> str:
        s = "" if v is None else str(v)
        if any(ch in s for ch in ',"\n'):
            s = '"' + s.replace('"', '""') + '"'
        return s

    lines = [",".join(cell(h) for h in header)]
    lines += [",".join(cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def sweep_table_csv(sweep) -> str:
    """Formatted sweep table: one row per width with the starred cell and raw numbers."""
    p = sweep.pvalues()
    rows = []
    for i, w in enumerate(sweep.widths):
        ok = bool(sweep.estimable[i])
        rows.append(
            [
                int(w),
                format_estimate(sweep.coef[i], sweep.se[i]) if ok else "",
                repr(float(sweep.coef[i])) if ok else "",
                repr(float(sweep.se[i])) if ok else "",
                repr(float(p[i])) if ok else "",
                repr(float(sweep.first_stage_f[i])) if ok else "",
                int(sweep.n_obs[i]) if ok else "",
                "" if ok else sweep.errors.get(int(w), "not estimable"),
            ]
        )
    return csv_text(["width", "cell", "coef", "se", "pvalue", "first_stage_f", "n_obs", "note"], rows)


# --------------------------------------------------------------------------
# SVG


_W, _H = 640, 400
_ML, _MR, _MT, _MB = 70, 150, 30, 50


def _runs(ok: np.ndarray) -> list[np.ndarray]:
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) != 1) + 1
    return np.split(idx, breaks)


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    span = hi - lo
    raw = span / max(n, 1)
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return np.arange(start, hi + step * 1e-9, step)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def render_trace_svg(sweep, path=None, title: str | None = None) -> str:
    """Line chart of coefficient (solid), 95% CI (dashed) and SE (dotted) against width.

    Gaps split the lines; an isolated estimable width is drawn as a marker.
    Output depends only on the sweep, so repeated renders are byte-identical.
    """
    widths = np.asarray(sweep.widths, dtype=float)
    if widths.size == 0:
        raise ValueError("empty sweep")
    ok = np.asarray(sweep.estimable)
    series = (
        ("coefficient", np.asarray(sweep.coef), "#1f4e9c", None),
        ("95% CI", np.asarray(sweep.ci_lo), "#1f4e9c", "6,4"),
        (None, np.asarray(sweep.ci_hi), "#1f4e9c", "6,4"),
        ("standard error", np.asarray(sweep.se), "#b03a2e", "2,3"),
    )
    vals = np.concatenate([s[1][ok] for s in series] + [np.zeros(1)])
    ylo, yhi = float(np.min(vals)), float(np.max(vals))
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 1.0, yhi + 1.0
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad
    xlo, xhi = float(widths.min()), float(widths.max())
    if xhi == xlo:
        xlo, xhi = xlo - 1.0, xhi + 1.0
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def sx(v):
        return _ML + (v - xlo) / (xhi - xlo) * pw

    def sy(v):
        return _MT + (yhi - v) / (yhi - ylo) * ph

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect x="0" y="0" width="{_W}" height="{_H}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{_ML}" y="18" font-family="sans-serif" font-size="13">{escape(title)}</text>')
    out.append(f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="black" stroke-width="1"/>')
    for v in _ticks(ylo, yhi):
        y = _fmt(sy(v))
        out.append(f'<line x1="{_ML - 4}" y1="{y}" x2="{_ML}" y2="{y}" stroke="black"/>')
        out.append(
            f'<text x="{_ML - 6}" y="{y}" font-family="sans-serif" font-size="10" text-anchor="end" '
            f'dominant-baseline="middle">{format_number(float(v)) if abs(v) > 1e-12 else "0"}</text>'
        )
    for v in _ticks(xlo, xhi, 6):
        x = _fmt(sx(v))
        out.append(f'<line x1="{x}" y1="{_MT + ph}" x2="{x}" y2="{_MT + ph + 4}" stroke="black"/>')
        out.append(
            f'<text x="{x}" y="{_MT + ph + 16}" font-family="sans-serif" font-size="10" '
            f'text-anchor="middle">{int(round(v)) if float(v).is_integer() else _fmt(v)}</text>'
        )
    if ylo < 0 < yhi:
        y0 = _fmt(sy(0.0))
        out.append(f'<line x1="{_ML}" y1="{y0}" x2="{_ML + pw}" y2="{y0}" stroke="#999999" stroke-width="0.5"/>')
    out.append(
        f'<text x="{_ML + pw / 2:.2f}" y="{_H - 10}" font-family="sans-serif" font-size="11" '
        'text-anchor="middle">window half-width (months)</text>'
    )
    for label, y, color, dash in series:
        style = f'stroke="{color}" stroke-width="1.5" fill="none"' + (f' stroke-dasharray="{dash}"' if dash else "")
        for run in _runs(ok & np.isfinite(y)):
            if run.size == 1:
                i = run[0]
                out.append(f'<circle cx="{_fmt(sx(widths[i]))}" cy="{_fmt(sy(y[i]))}" r="3" fill="{color}"/>')
            else:
                pts = " ".join(f"{_fmt(sx(widths[i]))},{_fmt(sy(y[i]))}" for i in run)
                out.append(f'<polyline points="{pts}" {style}/>')
    ly = _MT + 10
    for label, _, color, dash in series:
        if label is None:
            continue
        lx = _ML + pw + 12
        style = f'stroke="{color}" stroke-width="1.5"' + (f' stroke-dasharray="{dash}"' if dash else "")
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 24}" y2="{ly}" {style}/>')
        out.append(
            f'<text x="{lx + 30}" y="{ly}" font-family="sans-serif" font-size="10" '
            f'dominant-baseline="middle">{escape(label)}</text>'
        )
        ly += 16
    out.append("</svg>")
    text = "\n".join(out) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
