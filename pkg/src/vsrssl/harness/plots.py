"""Small self-contained SVG charts for sweep CSVs (no plotting dependency)."""
from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from collections import defaultdict
from pathlib import Path
from typing import Sequence

from ..train.metrics import MetricRecord, read_metrics_csv

WIDTH, HEIGHT = 520, 340
MARGIN = dict(left=60, right=130, top=30, bottom=50)
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def log_x(fractions: Sequence[float], left: float, right: float):
    """Map fractions to pixel x on a log10 axis spanning [left, right]."""
    lo, hi = math.log10(min(fractions)), math.log10(max(fractions))
    span = hi - lo or 1.0

    def f(x: float) -> float:
        if len(set(fractions)) == 1:
            return (left + right) / 2
        return left + (math.log10(x) - lo) / span * (right - left)

    return f


def _svg(title: str):
    root = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", width=str(WIDTH), height=str(HEIGHT),
                      viewBox=f"0 0 {WIDTH} {HEIGHT}")
    ET.SubElement(root, "rect", width=str(WIDTH), height=str(HEIGHT), fill="white")
    t = ET.SubElement(root, "text", x=str(WIDTH / 2), y="18", attrib={"text-anchor": "middle", "font-size": "13"})
    t.text = title
    return root


def _text(parent, x, y, s, **kw):
    el = ET.SubElement(parent, "text", x=f"{x:.1f}", y=f"{y:.1f}", attrib={"font-size": "10", **kw})
    el.text = s
    return el


def _axes(root, y_lo: float, y_hi: float, y_label: str):
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    ET.SubElement(root, "line", x1=str(x0), y1=str(y0), x2=str(x1), y2=str(y0), stroke="black")
    ET.SubElement(root, "line", x1=str(x0), y1=str(y0), x2=str(x0), y2=str(y1), stroke="black")
    for i in range(5):
        v = y_lo + (y_hi - y_lo) * i / 4
        y = y0 - (y0 - y1) * i / 4
        _text(root, x0 - 6, y + 3, f"{v:.2f}", **{"text-anchor": "end"})
    _text(root, 14, (y0 + y1) / 2, y_label, transform=f"rotate(-90 14 {(y0 + y1) / 2})", **{"text-anchor": "middle"})

    def ymap(v: float) -> float:
        return y0 - (v - y_lo) / ((y_hi - y_lo) or 1.0) * (y0 - y1)

    return x0, x1, ymap


def _legend(root, entries: Sequence[str]):
    x = WIDTH - MARGIN["right"] + 12
    group = ET.SubElement(root, "g", attrib={"class": "legend"})
    for i, name in enumerate(entries):
        y = MARGIN["top"] + 16 * i + 8
        ET.SubElement(group, "rect", x=str(x), y=str(y - 8), width="10", height="10", fill=COLORS[i % len(COLORS)],
                      attrib={"class": "legend-entry"})
        _text(group, x + 14, y + 1, name)


def fraction_curve(records: Sequence[MetricRecord]) -> ET.Element:
    """Seed-mean metric against label fraction (log axis), one line per regime."""
    metric = records[0].metric
    by = defaultdict(lambda: defaultdict(list))
    for r in records:
        by[r.regime][r.fraction].append(r.value)
    fractions = sorted({r.fraction for r in records})
    values = [r.value for r in records]
    lo, hi = min(0.0, min(values)), max(1.0, max(values))
    root = _svg(f"{metric} vs fraction of labelled training data")
    x0, x1, ymap = _axes(root, lo, hi, metric)
    xmap = log_x(fractions, x0 + 10, x1 - 10)
    for f in fractions:
        _text(root, xmap(f), HEIGHT - MARGIN["bottom"] + 14, f"{f:g}", **{"text-anchor": "middle"})
    _text(root, (x0 + x1) / 2, HEIGHT - 10, "fraction (log scale)", **{"text-anchor": "middle"})
    regimes = sorted(by)
    for i, regime in enumerate(regimes):
        color = COLORS[i % len(COLORS)]
        pts = [(xmap(f), ymap(sum(v) / len(v))) for f, v in sorted(by[regime].items())]
        if len(pts) > 1:
            ET.SubElement(root, "polyline", points=" ".join(f"{x:.1f},{y:.1f}" for x, y in pts), fill="none",
                          stroke=color, attrib={"stroke-width": "2"})
        for x, y in pts:
            ET.SubElement(root, "circle", cx=f"{x:.1f}", cy=f"{y:.1f}", r="3.5", fill=color,
                          attrib={"class": "point"})
    _legend(root, regimes)
    return root


def tap_bars(records: Sequence[MetricRecord]) -> ET.Element:
    """Seed-mean accuracy per tap; taps are read from ``tap:<name>:s<seed>`` run ids."""
    by = defaultdict(list)
    for r in records:
        parts = r.run_id.split(":")
        by[parts[1] if len(parts) > 2 else r.run_id].append(r.value)
    taps = list(by)
    root = _svg("frozen-feature accuracy per tap")
    x0, x1, ymap = _axes(root, 0.0, 1.0, records[0].metric)
    slot = (x1 - x0) / len(taps)
    for i, tap in enumerate(taps):
        mean = sum(by[tap]) / len(by[tap])
        x = x0 + slot * i + slot * 0.2
        y = ymap(mean)
        ET.SubElement(root, "rect", x=f"{x:.1f}", y=f"{y:.1f}", width=f"{slot * 0.6:.1f}",
                      height=f"{ymap(0.0) - y:.1f}", fill=COLORS[i % len(COLORS)], attrib={"class": "point"})
        _text(root, x + slot * 0.3, HEIGHT - MARGIN["bottom"] + 14, tap, **{"text-anchor": "middle"})
    _legend(root, taps)
    return root


def emit_plot(csv_path: str | Path, kind: str, out: str | Path) -> Path:
    records = read_metrics_csv(csv_path)
    if not records:
        raise ValueError(f"{csv_path}: no metric rows to plot")
    builders = {"fraction-curve": fraction_curve, "tap-bars": tap_bars}
    if kind not in builders:
        raise ValueError(f"unknown plot kind {kind!r}; choose {', '.join(builders)}")
    root = builders[kind](records)
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ET.ElementTree(root).write(out, encoding="unicode", xml_declaration=True)
    return out
