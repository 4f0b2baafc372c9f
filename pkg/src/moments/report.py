"""Static HTML reports with inline SVG charts (no scripts, no external assets)."""

from __future__ import annotations

import html
from typing import Mapping, Sequence

WIDTH, HEIGHT, PAD = 480, 280, 40


def _scale(lo: float, hi: float, out_lo: float, out_hi: float):
    span = (hi - lo) or 1.0
    return lambda v: out_lo + (v - lo) / span * (out_hi - out_lo)


def bar_chart(rows: Sequence[Mapping], title: str, value_key: str = "value", label_key: str = "metric",
              lo_key: str | None = "ci_lo", hi_key: str | None = "ci_hi") -> str:
    """Vertical bars with optional interval whiskers."""
    vals = [float(r[value_key]) for r in rows]
    extra = [float(r[k]) for r in rows for k in (lo_key, hi_key) if k and k in r]
    lo, hi = min([0.0, *vals, *extra]), max([0.0, *vals, *extra])
    y = _scale(lo, hi, HEIGHT - PAD, PAD)
    step = (WIDTH - 2 * PAD) / max(1, len(rows))
    parts = [f'<line x1="{PAD}" y1="{y(0):.1f}" x2="{WIDTH - PAD}" y2="{y(0):.1f}" stroke="#444"/>']
    for i, (r, v) in enumerate(zip(rows, vals)):
        x = PAD + i * step + step * 0.15
        w = step * 0.7
        top, bottom = sorted((y(v), y(0)))
        parts.append(f'<rect x="{x:.1f}" y="{top:.1f}" width="{w:.1f}" height="{bottom - top:.1f}" fill="#4a7ab5"/>')
        if lo_key and hi_key and lo_key in r and hi_key in r:
            cx = x + w / 2
            parts.append(f'<line x1="{cx:.1f}" y1="{y(float(r[lo_key])):.1f}" x2="{cx:.1f}" '
                         f'y2="{y(float(r[hi_key])):.1f}" stroke="#000"/>')
        parts.append(f'<text x="{x + w / 2:.1f}" y="{HEIGHT - PAD + 14}" font-size="11" text-anchor="middle">'
                     f'{html.escape(str(r[label_key]))}</text>')
        parts.append(f'<text x="{x + w / 2:.1f}" y="{top - 4:.1f}" font-size="10" text-anchor="middle">{v:.3f}</text>')
    return _svg(title, parts)


def scatter_chart(points: Sequence[tuple[float, float, int]], title: str, x_label: str, y_label: str) -> str:
    """Scatter of ``(x, y, group)`` with a y = x reference line; group 1 is drawn in red."""
    if not points:
        return _svg(title, [])
    coords = [v for p in points for v in p[:2]]
    lo, hi = min(coords), max(coords)
    x = _scale(lo, hi, PAD, WIDTH - PAD)
    y = _scale(lo, hi, HEIGHT - PAD, PAD)
    parts = [f'<line x1="{x(lo):.1f}" y1="{y(lo):.1f}" x2="{x(hi):.1f}" y2="{y(hi):.1f}" '
             f'stroke="#999" stroke-dasharray="4 3"/>']
    for px, py, group in points:
        color = "#c0392b" if group == 1 else "#2c7fb8"
        parts.append(f'<circle cx="{x(px):.1f}" cy="{y(py):.1f}" r="3" fill="{color}" fill-opacity="0.7"/>')
    parts.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 6}" font-size="11" text-anchor="middle">{html.escape(x_label)}</text>')
    parts.append(f'<text x="12" y="{HEIGHT / 2}" font-size="11" text-anchor="middle" '
                 f'transform="rotate(-90 12 {HEIGHT / 2})">{html.escape(y_label)}</text>')
    return _svg(title, parts)


def _svg(title: str, parts: list[str]) -> str:
    body = "\n  ".join(parts)
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">\n  <text x="{WIDTH / 2}" y="18" font-size="13" '
            f'text-anchor="middle">{html.escape(title)}</text>\n  {body}\n</svg>')


def html_report(title: str, charts: Sequence[str], tables: Sequence[tuple[str, Sequence[Mapping]]] = ()) -> str:
    blocks = [f"<h1>{html.escape(title)}</h1>", *charts]
    for caption, rows in tables:
        if not rows:
            continue
        cols = list(rows[0].keys())
        head = "".join(f"<th>{html.escape(c)}</th>" for c in cols)
        body = "".join(
            "<tr>" + "".join(f"<td>{html.escape(_fmt(r.get(c)))}</td>" for c in cols) + "</tr>" for r in rows
        )
        blocks.append(f"<h2>{html.escape(caption)}</h2><table><tr>{head}</tr>{body}</table>")
    style = "body{font-family:sans-serif;margin:2em}table{border-collapse:collapse}td,th{border:1px solid #ccc;padding:2px 8px}"
    return (f"<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{html.escape(title)}</title>"
            f"<style>{style}</style></head><body>\n" + "\n".join(blocks) + "\n</body></html>\n")


def _fmt(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)
