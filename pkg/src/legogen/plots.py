"""Minimal standalone SVG line charts for metric logs."""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union
from xml.sax.saxutils import escape

WIDTH, HEIGHT, PAD = 480, 300, 48


def line_chart_svg(xs: Sequence[float], ys: Sequence[Optional[float]], title: str,
                   x_label: str = "iteration") -> str:
    pts = [(float(x), float(y)) for x, y in zip(xs, ys) if y is not None]
    lines = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
             f'viewBox="0 0 {WIDTH} {HEIGHT}">',
             '<rect width="100%" height="100%" fill="white"/>',
             f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-family="sans-serif" '
             f'font-size="14">{escape(title)}</text>']
    if pts:
        x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
        y0, y1 = min(p[1] for p in pts), max(p[1] for p in pts)
        x1 = x1 if x1 > x0 else x0 + 1
        y1 = y1 if y1 > y0 else y0 + 1

        def sx(x):
            return PAD + (x - x0) / (x1 - x0) * (WIDTH - 2 * PAD)

        def sy(y):
            return HEIGHT - PAD - (y - y0) / (y1 - y0) * (HEIGHT - 2 * PAD)

        path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        lines += [
            f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
            f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
            f'<polyline fill="none" stroke="#1f77b4" stroke-width="1.5" points="{path}"/>',
            f'<text x="{PAD}" y="{HEIGHT - PAD + 16}" font-family="sans-serif" font-size="10">{x0:g}</text>',
            f'<text x="{WIDTH - PAD}" y="{HEIGHT - PAD + 16}" text-anchor="end" font-family="sans-serif" '
            f'font-size="10">{x1:g}</text>',
            f'<text x="{PAD - 4}" y="{HEIGHT - PAD}" text-anchor="end" font-family="sans-serif" '
            f'font-size="10">{y0:.3g}</text>',
            f'<text x="{PAD - 4}" y="{PAD + 4}" text-anchor="end" font-family="sans-serif" '
            f'font-size="10">{y1:.3g}</text>',
            f'<text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="11">{escape(x_label)}</text>',
        ]
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_metric_plots(rows: List[Dict], out_dir: Union[str, Path], x: str,
                       metrics: Sequence[str]) -> List[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    xs = [r[x] for r in rows]
    for m in metrics:
        path = out / f"{m}.svg"
        path.write_text(line_chart_svg(xs, [r.get(m) for r in rows], m, x), encoding="utf-8")
        written.append(path)
    return written
