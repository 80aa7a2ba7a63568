"""Standalone SVG views of an experiment report.

Plots compute nothing new: every data value is written from the same
formatter as the CSV files and carried in a ``data-value`` attribute.
"""

from __future__ import annotations

import math
from xml.sax.saxutils import escape, quoteattr

import numpy as np

from ..errors import EmptyReport
from .experiment import ExperimentReport, fmt

WIDTH, HEIGHT = 640, 400
MARGIN = 60
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _header(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f"<title>{escape(title)}</title>",
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]


def _scale(lo: float, hi: float, a: float, b: float):
    span = hi - lo if hi > lo else 1.0
    return lambda v: a + (v - lo) / span * (b - a)


def _footnote(report: ExperimentReport) -> list[str]:
    parts = []
    for f in report.filters:
        kinds = report.failures.get(f, {})
        if kinds:
            detail = ", ".join(f"{k}={kinds[k]}" for k in sorted(kinds))
            parts.append(f"{f}: {report.failed_realizations[f]} failed realizations ({detail})")
    if not parts:
        return []
    text = "failures: " + "; ".join(parts)
    return [f'<text class="footnote" x="{MARGIN}" y="{HEIGHT - 8}" font-size="10">{escape(text)}</text>']


def _check(report: ExperimentReport) -> None:
    if report is None or not report.filters or report.steps < 1:
        raise EmptyReport("nothing to plot")


def nll_svg(report: ExperimentReport) -> str:
    """Mean NLL against time step, one polyline per filter."""
    _check(report)
    values = np.concatenate([report.mean_nll[f] for f in report.filters])
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        raise EmptyReport("no finite NLL values")
    lo, hi = float(finite.min()), float(finite.max())
    sx = _scale(1, max(report.steps, 2), MARGIN, WIDTH - MARGIN)
    sy = _scale(lo, hi, HEIGHT - MARGIN, MARGIN)
    out = _header("Mean NLL per step")
    out += _axes("k", "mean NLL", (str(1), str(report.steps)), (fmt(lo), fmt(hi)))
    for i, f in enumerate(report.filters):
        color = PALETTE[i % len(PALETTE)]
        ys = report.mean_nll[f]
        pts = [(k + 1, v) for k, v in enumerate(ys) if math.isfinite(v)]
        coords = " ".join(f"{sx(k):.2f},{sy(v):.2f}" for k, v in pts)
        out.append(f'<g class="series" data-filter={quoteattr(f)}>')
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        for k, v in pts:
            out.append(
                f'<circle cx="{sx(k):.2f}" cy="{sy(v):.2f}" r="2" fill="{color}" '
                f'data-k="{k}" data-value="{fmt(v)}"/>'
            )
        out.append("</g>")
        out.append(
            f'<text x="{WIDTH - MARGIN + 5}" y="{MARGIN + 14 * i}" fill="{color}" font-size="11">{escape(f)}</text>'
        )
    out += _footnote(report)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def timing_svg(report: ExperimentReport) -> str:
    """Box plot of pooled one-step times; whiskers are the reported min and max."""
    _check(report)
    stats = {f: report.time_summary[f] for f in report.filters if all(math.isfinite(v) for v in report.time_summary[f])}
    if not stats:
        raise EmptyReport("no timing data")
    lo = min(s[0] for s in stats.values())
    hi = max(s[4] for s in stats.values())
    sy = _scale(lo, hi, HEIGHT - MARGIN, MARGIN)
    slot = (WIDTH - 2 * MARGIN) / len(report.filters)
    out = _header("One-step computation time")
    out += _axes("filter", "step time [ns]", None, (fmt(lo), fmt(hi)))
    names = ("min", "q1", "median", "q3", "max")
    for i, f in enumerate(report.filters):
        if f not in stats:
            continue
        mn, q1, med, q3, mx = stats[f]
        cx = MARGIN + slot * (i + 0.5)
        half = slot * 0.25
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<g class="box" data-filter={quoteattr(f)}>')
        out.append(f'<line class="whisker" x1="{cx:.2f}" x2="{cx:.2f}" y1="{sy(mn):.2f}" y2="{sy(q1):.2f}" stroke="black" data-value="{fmt(mn)}"/>')
        out.append(f'<line class="whisker" x1="{cx:.2f}" x2="{cx:.2f}" y1="{sy(q3):.2f}" y2="{sy(mx):.2f}" stroke="black" data-value="{fmt(mx)}"/>')
        out.append(
            f'<rect x="{cx - half:.2f}" y="{sy(q3):.2f}" width="{2 * half:.2f}" height="{sy(q1) - sy(q3):.2f}" '
            f'fill="{color}" fill-opacity="0.4" stroke="black"/>'
        )
        for name, v in zip(names, stats[f]):
            out.append(
                f'<line class="{name}" x1="{cx - half:.2f}" x2="{cx + half:.2f}" y1="{sy(v):.2f}" y2="{sy(v):.2f}" '
                f'stroke="black" data-stat="{name}" data-value="{fmt(v)}"/>'
            )
        out.append("</g>")
        out.append(f'<text x="{cx:.2f}" y="{HEIGHT - MARGIN + 16}" text-anchor="middle" font-size="11">{escape(f)}</text>')
    out += _footnote(report)
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _axes(xlabel: str, ylabel: str, xticks, yticks) -> list[str]:
    x0, x1, y0, y1 = MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN
    out = [
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
        f'<text x="{(x0 + x1) // 2}" y="{HEIGHT - 25}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>',
        f'<text x="15" y="{(y0 + y1) // 2}" font-size="12" transform="rotate(-90 15 {(y0 + y1) // 2})" '
        f'text-anchor="middle">{escape(ylabel)}</text>',
    ]
    if xticks:
        out.append(f'<text x="{x0}" y="{y0 + 14}" font-size="10" text-anchor="middle">{xticks[0]}</text>')
        out.append(f'<text x="{x1}" y="{y0 + 14}" font-size="10" text-anchor="middle">{xticks[1]}</text>')
    if yticks:
        out.append(f'<text x="{x0 - 4}" y="{y0}" font-size="9" text-anchor="end">{yticks[0]}</text>')
        out.append(f'<text x="{x0 - 4}" y="{y1 + 8}" font-size="9" text-anchor="end">{yticks[1]}</text>')
    return out


def plot_report(report: ExperimentReport) -> dict[str, str]:
    """SVG documents keyed by file name."""
    return {"nll.svg": nll_svg(report), "timing.svg": timing_svg(report)}
