"""Benchmark tables (text, CSV, markdown) and SVG bar charts."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

from .metrics import MetricsReport

HEADER = ("Model", "MSE", "RMSE", "MAE", "MAPE", "R²")


@dataclass
class BenchmarkRow:
    label: str
    report: MetricsReport | None = None
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.report is None


def _cells(row: BenchmarkRow, digits: int = 3) -> list[str]:
    if row.failed:
        return [row.label] + ["failed"] * 5
    r = row.report
    r2 = "n/a" if r.r2 is None else f"{r.r2:.{digits}f}"
    return [row.label, f"{r.mse:.{digits}f}", f"{r.rmse:.{digits}f}", f"{r.mae:.{digits}f}",
            f"{r.mape_percent:.{digits}f}", r2]


def render_text(rows: list[BenchmarkRow], title: str = "") -> str:
    table = [list(HEADER)] + [_cells(r) for r in rows]
    widths = [max(len(line[i]) for line in table) for i in range(len(HEADER))]
    lines = [title] if title else []
    for k, line in enumerate(table):
        lines.append("  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(line, widths))))
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_markdown(rows: list[BenchmarkRow]) -> str:
    out = ["| " + " | ".join(HEADER) + " |", "|" + "---|" * len(HEADER)]
    out += ["| " + " | ".join(_cells(r)) + " |" for r in rows]
    return "\n".join(out) + "\n"


def render_csv(rows: list[BenchmarkRow]) -> str:
    """Full-precision values; ``rmse`` is always ``sqrt(mse)`` of the value in the same row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "mse", "rmse", "mae", "mape", "r2", "n", "status"])
    for row in rows:
        if row.failed:
            w.writerow([row.label, "", "", "", "", "", "", f"failed: {row.error}"])
            continue
        r = row.report
        w.writerow([row.label, repr(r.mse), repr(r.rmse), repr(r.mae), repr(r.mape_percent),
                    "" if r.r2 is None else repr(r.r2), r.n, "ok"])
    return buf.getvalue()


def render_svg(rows: list[BenchmarkRow], metric: str = "mse", title: str | None = None) -> str:
    """One labeled bar per model; failed models get an empty slot."""
    values = [None if r.failed else getattr(r.report, metric) for r in rows]
    finite = [v for v in values if v is not None and math.isfinite(v)]
    top = max(finite) if finite else 1.0
    top = top if top > 0 else 1.0
    bar_w, gap, left, plot_h, base_y = 60, 30, 60, 220, 260
    width = left + len(rows) * (bar_w + gap) + gap
    title = title or f"{metric.upper()} by model"
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="320" '
        f'viewBox="0 0 {width} 320">',
        f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{escape(title)}</text>',
        f'<line x1="{left - 5}" y1="{base_y}" x2="{width - 10}" y2="{base_y}" stroke="black"/>',
    ]
    for i, (row, v) in enumerate(zip(rows, values)):
        x = left + gap + i * (bar_w + gap)
        label = escape(row.label)
        if v is not None and math.isfinite(v):
            h = plot_h * v / top
            parts.append(f'<rect class="bar" data-model="{label}" x="{x}" y="{base_y - h:.2f}" '
                         f'width="{bar_w}" height="{h:.2f}" fill="#4a78b5"/>')
            parts.append(f'<text x="{x + bar_w / 2:.1f}" y="{base_y - h - 4:.2f}" text-anchor="middle" '
                         f'font-family="sans-serif" font-size="10">{v:.3f}</text>')
        parts.append(f'<text class="label" x="{x + bar_w / 2:.1f}" y="{base_y + 16}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="10">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
