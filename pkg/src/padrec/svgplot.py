"""Static, self-contained SVG line charts for benchmark reports.

No stylesheets, scripts, or external references: every chart is a single
well-formed <svg> element that renders identically everywhere.
"""

from xml.sax.saxutils import escape

import numpy as np

from padrec.errors import RangeError

PALETTE = ("#1f6fb2", "#c9503e", "#3d8f5f", "#8a5fb2")
WIDTH, HEIGHT = 640, 400
MARGIN = {"left": 64, "right": 24, "top": 44, "bottom": 48}


def _scale(lo: float, hi: float):
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _ticks(lo: float, hi: float, n: int = 5):
    return np.linspace(lo, hi, n)


def line_chart(x, series, title: str = "", x_label: str = "", y_label: str = "") -> str:
    """SVG markup for one or more (name, ys) line series over shared x."""
    x = [float(v) for v in x]
    series = [(str(name), [float(v) for v in ys]) for name, ys in series]
    if not x or not series:
        raise RangeError("chart needs at least one point and one series")
    for name, ys in series:
        if len(ys) != len(x):
            raise RangeError(f"series {name!r} length {len(ys)} != {len(x)} x values")

    x_lo, x_hi = _scale(min(x), max(x))
    all_y = [v for _, ys in series for v in ys]
    y_lo, y_hi = _scale(min(all_y), max(all_y))
    px0, px1 = MARGIN["left"], WIDTH - MARGIN["right"]
    py0, py1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def sx(v):
        return px0 + (v - x_lo) / (x_hi - x_lo) * (px1 - px0)

    def sy(v):
        return py0 + (v - y_lo) / (y_hi - y_lo) * (py1 - py0)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>',
        f'<line x1="{px0}" y1="{py0}" x2="{px1}" y2="{py0}" stroke="#222222"/>',
        f'<line x1="{px0}" y1="{py0}" x2="{px0}" y2="{py1}" stroke="#222222"/>',
    ]
    if title:
        parts.append(f'<text x="{WIDTH / 2:.1f}" y="24" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="15">{escape(title)}</text>')
    if x_label:
        parts.append(f'<text x="{(px0 + px1) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12">{escape(x_label)}</text>')
    if y_label:
        parts.append(f'<text x="16" y="{(py0 + py1) / 2:.1f}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="12" '
                     f'transform="rotate(-90 16 {(py0 + py1) / 2:.1f})">{escape(y_label)}</text>')
    for tv in _ticks(x_lo, x_hi):
        parts.append(f'<line x1="{sx(tv):.1f}" y1="{py0}" x2="{sx(tv):.1f}" y2="{py0 + 4}" '
                     f'stroke="#222222"/>')
        parts.append(f'<text x="{sx(tv):.1f}" y="{py0 + 18}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{tv:.3g}</text>')
    for tv in _ticks(y_lo, y_hi):
        parts.append(f'<line x1="{px0 - 4}" y1="{sy(tv):.1f}" x2="{px0}" y2="{sy(tv):.1f}" '
                     f'stroke="#222222"/>')
        parts.append(f'<text x="{px0 - 8}" y="{sy(tv):.1f}" text-anchor="end" dy="4" '
                     f'font-family="sans-serif" font-size="11">{tv:.3g}</text>')
    for i, (name, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        for a, b in zip(x, ys):
            parts.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="3" fill="{color}"/>')
        ly = MARGIN["top"] + 16 * i
        parts.append(f'<line x1="{px1 - 120}" y1="{ly}" x2="{px1 - 96}" y2="{ly}" '
                     f'stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{px1 - 90}" y="{ly}" dy="4" font-family="sans-serif" '
                     f'font-size="12">{escape(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(markup: str, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(markup)


# ---------------------------------------------------------------------------
# report-level charts
# ---------------------------------------------------------------------------


def sweep_chart(rows, title: str = "depth sweep") -> str:
    """Dual-series chart (tau and, when timed, speedup) against tree depth."""
    sd = [r for r in rows if r.depth >= 1]
    if not sd:
        raise RangeError("no SD rows to plot")
    depths = sorted({r.depth for r in sd})
    def col(depth, field):
        vals = [getattr(r, field) for r in sd if r.depth == depth]
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None
    series = [("tau", [col(b, "tau") for b in depths])]
    speedups = [col(b, "speedup") for b in depths]
    if all(v is not None for v in speedups):
        series.append(("speedup", speedups))
    return line_chart(depths, series, title=title, x_label="speculation depth",
                      y_label="tokens per call / ratio")


def plot_report(rows, out_dir) -> list:
    """One chart per (temperature, width, ablation) group of SD rows."""
    import os

    groups = {}
    for r in rows:
        if r.depth >= 1:
            groups.setdefault((r.temperature, r.width, r.ablation), []).append(r)
    if not groups:
        raise RangeError("report holds no SD rows")
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for (temp, width, ablation), grp in sorted(groups.items()):
        name = f"sweep-t{temp:g}-w{width}-{ablation or 'plain'}.svg"
        path = os.path.join(out_dir, name)
        write_svg(sweep_chart(grp, title=f"T={temp:g} w={width} {ablation}"), path)
        written.append(path)
    return written
