"""Log-log SVG of median error against horizon, written without a plotting library."""
from __future__ import annotations

import math
from pathlib import Path
from xml.sax.saxutils import escape

from .experiment import ESTIMATORS, ExperimentReport, read_report

__all__ = ["error_plot_svg", "plot_report"]

COLORS = {"son_sg": "#1f77b4", "ols_pairs": "#d62728", "oracle_ols": "#2ca02c"}
LABELS = {"son_sg": "SON-SG", "ols_pairs": "OLS on observed pairs", "oracle_ols": "OLS on full data"}

W, H = 640, 440
LEFT, RIGHT, TOP, BOTTOM = 70, 190, 30, 60


def _decades(lo: float, hi: float) -> list[float]:
    return [10.0 ** k for k in range(math.floor(math.log10(lo)), math.ceil(math.log10(hi)) + 1)]


def error_plot_svg(series: dict[str, list[tuple[float, float]]], title: str = "median error vs T") -> str:
    """``series`` maps a label key to ``(T, median error)`` points; adds a slope -1/2 guide."""
    pts = [p for s in series.values() for p in s if p[1] > 0]
    if not pts:
        raise ValueError("nothing to plot")
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    x_lo, x_hi = math.log10(min(xs)) - 0.1, math.log10(max(xs)) + 0.1
    y_lo, y_hi = math.log10(min(ys)) - 0.3, math.log10(max(ys)) + 0.3

    def px(x):
        return LEFT + (math.log10(x) - x_lo) / (x_hi - x_lo) * (W - LEFT - RIGHT)

    def py(y):
        return H - BOTTOM - (math.log10(y) - y_lo) / (y_hi - y_lo) * (H - TOP - BOTTOM)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<text x="{W / 2:.1f}" y="18" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<text x="{(LEFT + W - RIGHT) / 2:.1f}" y="{H - 15}" text-anchor="middle" font-size="12">T (log scale)</text>',
        f'<text x="15" y="{(TOP + H - BOTTOM) / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 15 {(TOP + H - BOTTOM) / 2:.1f})">error (log scale)</text>',
    ]
    for v in _decades(10 ** x_lo, 10 ** x_hi):
        if x_lo <= math.log10(v) <= x_hi:
            x = px(v)
            out.append(f'<line x1="{x:.1f}" y1="{H - BOTTOM}" x2="{x:.1f}" y2="{H - BOTTOM + 5}" stroke="black"/>')
            out.append(f'<text x="{x:.1f}" y="{H - BOTTOM + 18}" text-anchor="middle" font-size="11">{v:g}</text>')
    for v in _decades(10 ** y_lo, 10 ** y_hi):
        if y_lo <= math.log10(v) <= y_hi:
            y = py(v)
            out.append(f'<line x1="{LEFT - 5}" y1="{y:.1f}" x2="{LEFT}" y2="{y:.1f}" stroke="black"/>')
            out.append(f'<text x="{LEFT - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="11">{v:g}</text>')

    legend_y = TOP + 10
    for key, points in series.items():
        points = sorted(p for p in points if p[1] > 0)
        if not points:
            continue
        color = COLORS.get(key, "#555555")
        path = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in points)
        out.append(f'<polyline class="series" data-series="{escape(key)}" points="{path}" '
                   f'fill="none" stroke="{color}" stroke-width="2"/>')
        for x, y in points:
            out.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="3" fill="{color}"/>')
        out.append(f'<line x1="{W - RIGHT + 10}" y1="{legend_y}" x2="{W - RIGHT + 30}" y2="{legend_y}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{W - RIGHT + 35}" y="{legend_y + 4}" font-size="11">'
                   f'{escape(LABELS.get(key, key))}</text>')
        legend_y += 18

    # guide through the first point of the first series
    x0, y0 = sorted(next(iter(series.values())))[0]
    x1 = max(xs)
    y1 = y0 * math.sqrt(x0 / x1)
    out.append(f'<line class="reference" x1="{px(x0):.2f}" y1="{py(y0):.2f}" x2="{px(x1):.2f}" y2="{py(y1):.2f}" '
               'stroke="gray" stroke-dasharray="5,4"/>')
    out.append(f'<line x1="{W - RIGHT + 10}" y1="{legend_y}" x2="{W - RIGHT + 30}" y2="{legend_y}" '
               'stroke="gray" stroke-dasharray="5,4"/>')
    out.append(f'<text x="{W - RIGHT + 35}" y="{legend_y + 4}" font-size="11">slope -1/2</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def plot_report(report: ExperimentReport | str | Path, svg_path) -> Path:
    """Regenerate the error plot from a report object or a report.jsonl path."""
    if not isinstance(report, ExperimentReport):
        report = read_report(report)
    series = {}
    for name in ESTIMATORS:
        pts = [(a["T"], a[name]["median"]) for a in report.aggregates if name in a and "median" in a[name]]
        if pts:
            series[name] = pts
    title = f"{report.config.get('name', 'experiment')}: median error vs T"
    svg_path = Path(svg_path)
    svg_path.write_text(error_plot_svg(series, title))
    return svg_path
