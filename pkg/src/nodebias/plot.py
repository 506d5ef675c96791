"""Self-contained SVG line charts from the emitted CSV tables.

Lines are cross-network averages, dots are per-network values. The x axis is
noise magnitude, the y axis probability in [0, 1].
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import DataError
from .report import read_csv

REGIME_COLORS = {"full": "#1f77b4", "truncated": "#ff7f0e"}
CLASS_DASH = ["", "6,3", "2,2", "8,3,2,3"]

PANEL_W, PANEL_H = 260, 200
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 48, 12, 28, 36


@dataclass
class Series:
    label: str
    color: str
    dash: str
    points: list[tuple[float, float]]


@dataclass
class Panel:
    title: str
    x_max: float
    series: list[Series] = field(default_factory=list)
    scatter: list[tuple[str, float, float]] = field(default_factory=list)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _panel_svg(panel: Panel, ox: float, oy: float) -> list[str]:
    w = PANEL_W - MARGIN_L - MARGIN_R
    h = PANEL_H - MARGIN_T - MARGIN_B
    x0, y0 = ox + MARGIN_L, oy + MARGIN_T
    x_max = panel.x_max if panel.x_max > 0 else 1.0

    def sx(v):
        return x0 + w * v / x_max

    def sy(p):
        return y0 + h * (1.0 - p)

    out = ['<g class="panel">',
           f'<text x="{_fmt(x0 + w / 2)}" y="{_fmt(oy + 16)}" text-anchor="middle" '
           f'font-size="12">{escape(panel.title)}</text>']
    for p in (0.0, 0.5, 1.0):
        out.append(f'<line class="grid" x1="{_fmt(x0)}" y1="{_fmt(sy(p))}" x2="{_fmt(x0 + w)}" '
                   f'y2="{_fmt(sy(p))}" stroke="#cccccc" stroke-width="1"/>')
        out.append(f'<text x="{_fmt(x0 - 4)}" y="{_fmt(sy(p) + 4)}" text-anchor="end" '
                   f'font-size="10">{p:.1f}</text>')
    out.append(f'<line x1="{_fmt(x0)}" y1="{_fmt(y0 + h)}" x2="{_fmt(x0 + w)}" y2="{_fmt(y0 + h)}" '
               f'stroke="#000000"/>')
    out.append(f'<line x1="{_fmt(x0)}" y1="{_fmt(y0)}" x2="{_fmt(x0)}" y2="{_fmt(y0 + h)}" '
               f'stroke="#000000"/>')
    for v in (0.0, x_max / 2, x_max):
        out.append(f'<text x="{_fmt(sx(v))}" y="{_fmt(y0 + h + 14)}" text-anchor="middle" '
                   f'font-size="10">{v:.3g}</text>')
    out.append(f'<text x="{_fmt(x0 + w / 2)}" y="{_fmt(y0 + h + 28)}" text-anchor="middle" '
               f'font-size="10">noise magnitude</text>')
    for color, x, y in panel.scatter:
        out.append(f'<circle cx="{_fmt(sx(x))}" cy="{_fmt(sy(y))}" r="1.8" fill="{color}" '
                   f'fill-opacity="0.35"/>')
    for s in panel.series:
        if not s.points:
            continue
        pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in s.points)
        dash = f' stroke-dasharray="{s.dash}"' if s.dash else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{s.color}" stroke-width="1.6"'
                   f'{dash}><title>{escape(s.label)}</title></polyline>')
    out.append("</g>")
    return out


def render_svg(title: str, panels: list[Panel], columns: int, legend: list[tuple[str, str, str]]) -> str:
    rows = (len(panels) + columns - 1) // columns
    legend_h = 18 * len(legend) + 10
    width = columns * PANEL_W
    height = 30 + rows * PANEL_H + legend_h
    out = ['<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
           f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" '
           f'height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">',
           f'<rect width="{width}" height="{height}" fill="#ffffff"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>']
    for k, panel in enumerate(panels):
        out.extend(_panel_svg(panel, (k % columns) * PANEL_W, 30 + (k // columns) * PANEL_H))
    ly = 30 + rows * PANEL_H + 8
    for k, (label, color, dash) in enumerate(legend):
        y = ly + 18 * k
        d = f' stroke-dasharray="{dash}"' if dash else ""
        out.append(f'<line x1="10" y1="{y + 5}" x2="40" y2="{y + 5}" stroke="{color}" '
                   f'stroke-width="2"{d}/>')
        out.append(f'<text x="46" y="{y + 9}" font-size="11">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _curves(rows):
    """(regime, target, polarity, class) -> sorted [(magnitude, probability)]"""
    out = defaultdict(list)
    for r in rows:
        if r["status"] != "ok":
            continue
        out[(r["regime"], r["target"], r["polarity"], r["class"])].append(
            (float(r["magnitude"]), float(r["probability"])))
    return {k: sorted(v) for k, v in out.items()}


def _scatter(rows):
    out = defaultdict(list)
    for r in rows:
        if r["status"] != "ok":
            continue
        out[(r["target"], r["polarity"], r["class"])].append(
            (REGIME_COLORS.get(r["regime"], "#555555"), float(r["magnitude"]), float(r["probability"])))
    return out


def _order(values):
    return list(dict.fromkeys(values))


def plot_reports(report_dir) -> list[Path]:
    """Write ``plots/*.svg`` for the tables in ``report_dir``; returns the paths."""
    report_dir = Path(report_dir)
    class_path = report_dir / "robustness_bias.csv"
    node_path = report_dir / "node_sensitivity.csv"
    if not class_path.exists() and not node_path.exists():
        raise DataError(f"{report_dir}: no report tables to plot")
    class_rows = read_csv(class_path) if class_path.exists() else []
    node_rows = read_csv(node_path) if node_path.exists() else []
    net_path = report_dir / "network_curves.csv"
    net_rows = read_csv(net_path) if net_path.exists() else []
    if not class_rows and not node_rows:
        raise DataError(f"{report_dir}: report tables are empty")
    scatter = _scatter(net_rows)
    plots = report_dir / "plots"
    plots.mkdir(exist_ok=True)
    written = []

    all_rows = class_rows + node_rows
    regimes = _order(r["regime"] for r in all_rows)
    classes = _order(r["class"] for r in all_rows)
    x_max = max(float(r["magnitude"]) for r in all_rows)
    legend = [(f"{reg} / {cls}", REGIME_COLORS.get(reg, "#555555"), CLASS_DASH[c % len(CLASS_DASH)])
              for reg in regimes for c, cls in enumerate(classes)]

    def panel_for(title, target, polarity, cls_list, curves):
        panel = Panel(title, x_max)
        for reg in regimes:
            for c, cls in enumerate(classes):
                if cls not in cls_list:
                    continue
                pts = curves.get((reg, target, polarity, cls), [])
                panel.series.append(Series(f"{reg} / {cls}", REGIME_COLORS.get(reg, "#555555"),
                                           CLASS_DASH[c % len(CLASS_DASH)], pts))
        for cls in cls_list:
            panel.scatter.extend(scatter.get((target, polarity, cls), []))
        return panel

    if class_rows:
        curves = _curves(class_rows)
        polarity = class_rows[0]["polarity"]
        panels = [panel_for(cls, "all", polarity, [cls], curves) for cls in classes]
        path = plots / "class_robustness.svg"
        path.write_text(render_svg(f"Class robustness ({polarity} noise, all nodes)", panels,
                                   len(panels), legend), encoding="utf-8")
        written.append(path)

    if node_rows:
        curves = _curves(node_rows)
        targets = _order(r["target"] for r in node_rows)
        names = {r["target"]: r["feature"] for r in node_rows}
        for polarity in _order(r["polarity"] for r in node_rows):
            panels = [panel_for(f"{cls}: NODE-{int(t) + 1} ({names[t]})", t, polarity, [cls], curves)
                      for cls in classes for t in targets]
            path = plots / f"node_sensitivity_{polarity}.svg"
            path.write_text(render_svg(f"Node sensitivity ({polarity} noise)", panels,
                                       len(targets), legend), encoding="utf-8")
            written.append(path)
    return written
