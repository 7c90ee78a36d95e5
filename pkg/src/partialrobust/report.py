"""Result rows and deterministic CSV / JSON / SVG emission.

All writers are byte-deterministic for identical input rows: floats are
rendered with ``repr`` (shortest round-trip form), JSON keys are sorted, and
the SVG is assembled from fixed-format strings with no external assets.
"""

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd

__all__ = [
    "ResultRow",
    "CSV_HEADER",
    "write_rows_csv",
    "read_rows_csv",
    "summarize_rows",
    "render_line_chart",
    "emit_report",
]

CSV_HEADER = "method,coord_name,coord_value,strength_s,proportion_pi,metric,value,replication,seed"

_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


@dataclass(frozen=True)
class ResultRow:
    """One evaluated metric at one sweep coordinate for one method."""

    method: str
    coord_name: str
    coord_value: float
    metric: str
    value: float
    replication: int
    seed: int
    strength_s: float = None
    proportion_pi: float = None

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise ValueError(f"non-finite metric value in row {self!r}")


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_rows_csv(rows, path):
    if not rows:
        raise ValueError("no result rows to write")
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    r.method,
                    r.coord_name,
                    float(r.coord_value),
                    r.strength_s if r.strength_s is None else float(r.strength_s),
                    r.proportion_pi if r.proportion_pi is None else float(r.proportion_pi),
                    r.metric,
                    float(r.value),
                    int(r.replication),
                    int(r.seed),
                )
            )
        )
    Path(path).write_bytes(("\n".join(lines) + "\n").encode("ascii"))


def read_rows_csv(path):
    frame = pd.read_csv(path)
    rows = []
    for rec in frame.to_dict("records"):
        rows.append(
            ResultRow(
                method=str(rec["method"]),
                coord_name=str(rec["coord_name"]),
                coord_value=float(rec["coord_value"]),
                metric=str(rec["metric"]),
                value=float(rec["value"]),
                replication=int(rec["replication"]),
                seed=int(rec["seed"]),
                strength_s=None if pd.isna(rec["strength_s"]) else float(rec["strength_s"]),
                proportion_pi=None
                if pd.isna(rec["proportion_pi"])
                else float(rec["proportion_pi"]),
            )
        )
    return rows


def _cell_key(row):
    return (
        row.method,
        row.coord_name,
        float(row.coord_value),
        None if row.strength_s is None else float(row.strength_s),
        None if row.proportion_pi is None else float(row.proportion_pi),
        row.metric,
    )


def summarize_rows(rows):
    """Mean, population standard deviation and count per (method, coordinate) cell."""
    if not rows:
        raise ValueError("no result rows to summarize")
    cells = {}
    for r in rows:
        cells.setdefault(_cell_key(r), []).append(float(r.value))
    summary = []
    for key in sorted(cells, key=lambda k: tuple(("" if v is None else v) for v in map(str, k))):
        method, coord_name, coord_value, s, pi, metric = key
        vals = np.asarray(cells[key])
        summary.append(
            {
                "method": method,
                "coord_name": coord_name,
                "coord_value": coord_value,
                "strength_s": s,
                "proportion_pi": pi,
                "metric": metric,
                "mean": float(vals.mean()),
                "std": float(vals.std()),
                "n": int(vals.size),
            }
        )
    return {"cells": summary}


def render_line_chart(series, x_label, y_label, title=""):
    """Static SVG line chart: one polyline per named series.

    ``series`` maps a name to a list of (x, y) points. Output is a plain SVG
    string whose bytes depend only on the inputs.
    """
    if not series:
        raise ValueError("no series to plot")
    width, height = 640, 420
    left, right, top, bottom = 70, 160, 40, 50
    plot_w, plot_h = width - left - right, height - top - bottom

    xs = [p[0] for pts in series.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def sx(x):
        return left + plot_w * (x - x_lo) / (x_hi - x_lo)

    def sy(y):
        return top + plot_h * (1.0 - (y - y_lo) / (y_hi - y_lo))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{left + plot_w / 2:.2f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">{title}</text>',
    ]
    # axes
    out.append(
        f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" y2="{top + plot_h}" '
        'stroke="black" stroke-width="1"/>'
    )
    out.append(
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" '
        'stroke="black" stroke-width="1"/>'
    )
    for i in range(5):
        fx = x_lo + (x_hi - x_lo) * i / 4
        fy = y_lo + (y_hi - y_lo) * i / 4
        out.append(
            f'<text x="{sx(fx):.2f}" y="{top + plot_h + 18}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{fx:.4g}</text>'
        )
        out.append(
            f'<text x="{left - 8}" y="{sy(fy) + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{fy:.4g}</text>'
        )
        out.append(
            f'<line x1="{left}" y1="{sy(fy):.2f}" x2="{left + plot_w}" y2="{sy(fy):.2f}" '
            'stroke="#dddddd" stroke-width="0.5"/>'
        )
    out.append(
        f'<text x="{left + plot_w / 2:.2f}" y="{height - 10}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12">{x_label}</text>'
    )
    out.append(
        f'<text x="18" y="{top + plot_h / 2:.2f}" text-anchor="middle" '
        f'font-family="sans-serif" font-size="12" '
        f'transform="rotate(-90 18 {top + plot_h / 2:.2f})">{y_label}</text>'
    )
    for i, name in enumerate(sorted(series)):
        color = _COLORS[i % len(_COLORS)]
        pts = sorted(series[name])
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>'
        )
        ly = top + 16 * i
        out.append(
            f'<line x1="{left + plot_w + 10}" y1="{ly:.2f}" x2="{left + plot_w + 30}" '
            f'y2="{ly:.2f}" stroke="{color}" stroke-width="1.5"/>'
        )
        out.append(
            f'<text x="{left + plot_w + 35}" y="{ly + 4:.2f}" font-family="sans-serif" '
            f'font-size="11">{name}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_report(rows, out_dir, name="results", chart=True):
    """Write rows as CSV, a JSON summary of per-cell means, and an SVG chart.

    Returns the list of written paths; identical rows produce identical bytes.
    """
    rows = list(rows)
    if not rows:
        raise ValueError("no result rows to report")
    if not {r.method for r in rows}:
        raise ValueError("rows carry no methods")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []

    csv_path = out_dir / f"{name}.csv"
    write_rows_csv(rows, csv_path)
    paths.append(csv_path)

    summary = summarize_rows(rows)
    json_path = out_dir / f"{name}_summary.json"
    json_path.write_bytes(
        (json.dumps(summary, sort_keys=True, indent=2) + "\n").encode("ascii")
    )
    paths.append(json_path)

    if chart:
        cells = summary["cells"]
        metrics = sorted({c["metric"] for c in cells})
        for metric in metrics:
            series = {}
            for c in cells:
                if c["metric"] == metric:
                    series.setdefault(c["method"], []).append(
                        (c["coord_value"], c["mean"])
                    )
            coord_name = next(c["coord_name"] for c in cells if c["metric"] == metric)
            svg = render_line_chart(series, coord_name, metric, title=name)
            svg_path = out_dir / f"{name}_{metric}.svg"
            svg_path.write_bytes(svg.encode("ascii"))
            paths.append(svg_path)
    return paths
