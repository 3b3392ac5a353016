"""CSV reports and dependency-free SVG line plots.

All CSVs use a header row, comma separators, and '.' decimals; floats are
written with repr so files are bit-reproducible across runs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .bencheval import EvalReport
from .training import AblationRow, HistoryRow

_COLORS = ("#1f6fb2", "#d1495b", "#2e8b57", "#e6a400", "#7851a9", "#444444")


def write_loss_csv(history: list[HistoryRow], path) -> None:
    lines = ["step,total,shape_consistency,reprojection,shape_reg,expr_reg"]
    for row in history:
        lines.append(f"{row.step},{row.total!r},{row.shape_consistency!r},"
                     f"{row.reprojection!r},{row.shape_reg!r},{row.expr_reg!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_curve_csv(report: EvalReport, path) -> None:
    lines = ["threshold_mm,fraction"]
    for threshold, fraction in zip(report.curve_thresholds, report.curve_fractions):
        lines.append(f"{float(threshold)!r},{float(fraction)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_curve_csv(path) -> tuple[np.ndarray, np.ndarray]:
    rows = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if not rows or rows[0] != "threshold_mm,fraction":
        raise ValueError(f"{path}: not a cumulative-curve CSV")
    data = np.array([[float(x) for x in row.split(",")] for row in rows[1:]])
    return data[:, 0], data[:, 1]


def write_ablation_csv(rows: list[AblationRow], path) -> None:
    lines = ["ring_size,median_mm,mean_mm,std_mm"]
    for row in rows:
        lines.append(f"{row.ring_size},{row.median_mm!r},{row.mean_mm!r},"
                     f"{row.std_mm!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def render_curves_svg(curves: list[tuple[str, np.ndarray, np.ndarray]], path,
                      title: str = "cumulative scan-to-mesh error",
                      x_label: str = "error threshold (mm)",
                      y_label: str = "fraction of distances") -> None:
    """Render labelled (x, y) series into a standalone SVG line plot."""
    width, height = 640, 480
    left, right, top, bottom = 70, 20, 40, 55
    plot_w, plot_h = width - left - right, height - top - bottom
    x_max = max((float(x.max()) for _, x, _ in curves if x.size), default=1.0) or 1.0

    def sx(x: float) -> float:
        return left + plot_w * x / x_max

    def sy(y: float) -> float:
        return top + plot_h * (1.0 - y)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="22" text-anchor="middle" '
        f'font-family="sans-serif" font-size="15">{title}</text>',
    ]
    # axes and ticks
    parts.append(f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" '
                 'fill="none" stroke="#222" stroke-width="1"/>')
    for i in range(6):
        x_val = x_max * i / 5
        y_val = i / 5
        parts.append(f'<line x1="{sx(x_val):.1f}" y1="{top + plot_h}" '
                     f'x2="{sx(x_val):.1f}" y2="{top + plot_h + 5}" stroke="#222"/>')
        parts.append(f'<text x="{sx(x_val):.1f}" y="{top + plot_h + 18}" '
                     f'text-anchor="middle" font-family="sans-serif" '
                     f'font-size="11">{x_val:g}</text>')
        parts.append(f'<line x1="{left - 5}" y1="{sy(y_val):.1f}" x2="{left}" '
                     f'y2="{sy(y_val):.1f}" stroke="#222"/>')
        parts.append(f'<text x="{left - 9}" y="{sy(y_val) + 4:.1f}" '
                     f'text-anchor="end" font-family="sans-serif" '
                     f'font-size="11">{y_val:g}</text>')
    parts.append(f'<text x="{left + plot_w / 2}" y="{height - 14}" '
                 f'text-anchor="middle" font-family="sans-serif" '
                 f'font-size="13">{x_label}</text>')
    parts.append(f'<text x="18" y="{top + plot_h / 2}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13" '
                 f'transform="rotate(-90 18 {top + plot_h / 2})">{y_label}</text>')
    for i, (label, xs, ys) in enumerate(curves):
        color = _COLORS[i % len(_COLORS)]
        points = " ".join(f"{sx(float(x)):.2f},{sy(float(y)):.2f}"
                          for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{points}" fill="none" stroke="{color}" '
                     'stroke-width="1.8"/>')
        legend_y = top + 16 + 16 * i
        parts.append(f'<line x1="{left + plot_w - 150}" y1="{legend_y - 4}" '
                     f'x2="{left + plot_w - 125}" y2="{legend_y - 4}" '
                     f'stroke="{color}" stroke-width="1.8"/>')
        parts.append(f'<text x="{left + plot_w - 118}" y="{legend_y}" '
                     f'font-family="sans-serif" font-size="12">{label}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")
