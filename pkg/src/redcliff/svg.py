"""Static SVG heatmaps for adjacency matrices and their differences.

Output is plain text built from rounded numbers only, so the same matrix
always renders to the same bytes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

CELL = 36
MARGIN = 40
TITLE_HEIGHT = 24


def _fmt(v: float) -> str:
    """Three significant digits, with negative zero folded to zero."""
    s = f"{float(v):.3g}"
    return "0" if s in ("-0", "0", "-0.0") else s


def _hex(rgb) -> str:
    return "#" + "".join(f"{int(round(255 * min(max(c, 0.0), 1.0))):02x}" for c in rgb)


def sequential_color(t: float) -> str:
    """White (0) to dark blue (1)."""
    t = min(max(t, 0.0), 1.0)
    lo, hi = np.array([1.0, 1.0, 1.0]), np.array([0.03, 0.19, 0.42])
    return _hex(lo + t * (hi - lo))


def diverging_color(t: float) -> str:
    """Blue (-1) through white (0) to red (1)."""
    t = min(max(t, -1.0), 1.0)
    white = np.array([1.0, 1.0, 1.0])
    end = np.array([0.70, 0.09, 0.17]) if t >= 0 else np.array([0.13, 0.40, 0.67])
    return _hex(white + abs(t) * (end - white))


def _render(values: np.ndarray, colors: np.ndarray, title: str, labels=None) -> str:
    n = values.shape[0]
    labels = list(labels) if labels is not None else [str(i) for i in range(n)]
    if len(labels) != n:
        raise ValueError("one label per node required")
    width = 2 * MARGIN + n * CELL
    height = 2 * MARGIN + n * CELL + TITLE_HEIGHT
    top = MARGIN + TITLE_HEIGHT
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="10">',
        f'<text x="{width // 2}" y="{MARGIN}" text-anchor="middle" font-size="13">{_escape(title)}</text>',
    ]
    for j, lab in enumerate(labels):
        x = MARGIN + j * CELL + CELL // 2
        out.append(f'<text x="{x}" y="{top - 4}" text-anchor="middle">{_escape(lab)}</text>')
    for i, lab in enumerate(labels):
        y = top + i * CELL + CELL // 2 + 4
        out.append(f'<text x="{MARGIN - 4}" y="{y}" text-anchor="end">{_escape(lab)}</text>')
        for j in range(n):
            x0, y0 = MARGIN + j * CELL, top + i * CELL
            out.append(
                f'<rect x="{x0}" y="{y0}" width="{CELL}" height="{CELL}" fill="{colors[i, j]}" stroke="#999999" '
                f'stroke-width="0.5"><title>{i}&lt;-{j}: {_fmt(values[i, j])}</title></rect>'
            )
            out.append(f'<text x="{x0 + CELL // 2}" y="{y0 + CELL // 2 + 3}" text-anchor="middle">{_fmt(values[i, j])}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _escape(s: str) -> str:
    return str(s).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def heatmap_svg(matrix, title: str = "", labels=None) -> str:
    """Cells shaded by value / max(matrix); an all-zero matrix renders blank."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"heatmap needs a square matrix, got {m.shape}")
    peak = np.abs(m).max()
    scaled = m / peak if peak > 0 else np.zeros_like(m)
    colors = np.vectorize(sequential_color, otypes=[object])(scaled)
    return _render(scaled, colors, title, labels)


def difference_svg(a, b, title: str = "", labels=None) -> str:
    """Diverging map of norm(a) - norm(b), each normalized by its own max, centered at 0."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("difference needs equal shapes")
    na = a / np.abs(a).max() if np.abs(a).max() > 0 else np.zeros_like(a)
    nb = b / np.abs(b).max() if np.abs(b).max() > 0 else np.zeros_like(b)
    d = na - nb
    peak = np.abs(d).max()
    colors = np.vectorize(lambda v: diverging_color(v / peak if peak > 0 else 0.0), otypes=[object])(d)
    return _render(d, colors, title, labels)


def top_k_edges(matrix, k: int = 10) -> list[tuple[int, int, float]]:
    """Largest nonzero off-diagonal entries as (target, source, value); ties go by index."""
    m = np.asarray(matrix, dtype=float)
    n = m.shape[0]
    cells = [(i, j, float(m[i, j])) for i in range(n) for j in range(n) if i != j and m[i, j] != 0]
    cells.sort(key=lambda c: (-c[2], c[0], c[1]))
    return cells[: max(k, 0)]


def write_svg(path, text: str) -> Path:
    path = Path(path)
    path.write_text(text, encoding="utf-8")
    return path
