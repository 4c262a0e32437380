"""Deterministic CSV and SVG writers.

Numbers are formatted with fixed rules (repr for CSV, 4 decimals for SVG
coordinates) so repeated runs produce identical bytes.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path

import numpy as np

PALETTE = {"V": "#9ecae1", "omega": "#fd8d3c", "both": "#d94801", "gamma0": "#31a354", "gamma1": "#e31a1c", "other": "#f0f0f0"}


def _num(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows) -> Path:
    """RFC 4180 style CSV (CRLF line endings, minimal quoting)."""
    path = Path(path)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(x) for x in row])
    path.write_bytes(buf.getvalue().encode())
    return path


def read_csv(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"missing artifact: {path.name}")
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def columns(path) -> dict:
    header, rows = read_csv(path)
    out = {}
    for j, name in enumerate(header):
        col = [r[j] for r in rows]
        try:
            out[name] = np.array([float(v) for v in col])
        except ValueError:
            out[name] = col
    return out


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_json(path, obj) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


# ---------------------------------------------------------------------------
# masks as run lengths


def mask_runs(label: str, mask: np.ndarray):
    """Rows (label, i, j0, j1) covering the True cells of a 2D mask, j1 exclusive."""
    rows = []
    for i in range(mask.shape[0]):
        r = np.flatnonzero(np.diff(np.concatenate([[0], mask[i].astype(np.int8), [0]])))
        for j0, j1 in zip(r[::2], r[1::2]):
            rows.append((label, i, int(j0), int(j1)))
    return rows


def runs_to_masks(rows, shape) -> dict:
    out = {}
    for label, i, j0, j1 in rows:
        m = out.setdefault(label, np.zeros(shape, dtype=bool))
        m[int(i), int(j0):int(j1)] = True
    return out


# ---------------------------------------------------------------------------
# SVG


def _f(x: float) -> str:
    s = f"{x:.4f}".rstrip("0").rstrip(".")
    return "0" if s in ("-0", "") else s


class Svg:
    def __init__(self, width: float, height: float, view=(0.0, 0.0, 1.0, 1.0), margin: float = 0.05):
        self.W, self.H = width, height
        x0, y0, x1, y1 = view
        self.view = view
        self.sx = (1 - 2 * margin) * width / (x1 - x0)
        self.sy = (1 - 2 * margin) * height / (y1 - y0)
        self.ox = margin * width
        self.oy = margin * height
        self.items = []

    def X(self, x):
        return self.ox + (x - self.view[0]) * self.sx

    def Y(self, y):
        return self.H - self.oy - (y - self.view[1]) * self.sy

    def rect(self, x0, y0, x1, y1, fill, stroke="none", opacity=None):
        op = f' fill-opacity="{_f(opacity)}"' if opacity is not None else ""
        self.items.append(f'<rect x="{_f(self.X(x0))}" y="{_f(self.Y(y1))}" width="{_f((x1 - x0) * self.sx)}" '
                          f'height="{_f((y1 - y0) * self.sy)}" fill="{fill}" stroke="{stroke}"{op}/>')

    def polyline(self, xs, ys, stroke="#000", width=1.0):
        pts = " ".join(f"{_f(self.X(x))},{_f(self.Y(y))}" for x, y in zip(xs, ys))
        self.items.append(f'<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="{_f(width)}"/>')

    def circle(self, x, y, r, fill):
        self.items.append(f'<circle cx="{_f(self.X(x))}" cy="{_f(self.Y(y))}" r="{_f(r)}" fill="{fill}"/>')

    def text(self, x, y, s, size=10):
        self.items.append(f'<text x="{_f(x)}" y="{_f(y)}" font-family="monospace" font-size="{size}">{s}</text>')

    def save(self, path) -> Path:
        body = "\n".join(self.items)
        doc = (f'<?xml version="1.0" encoding="UTF-8"?>\n<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
               f'width="{_f(self.W)}" height="{_f(self.H)}" viewBox="0 0 {_f(self.W)} {_f(self.H)}">\n{body}\n</svg>\n')
        path = Path(path)
        path.write_text(doc)
        return path


def region_svg(path, bbox, h, origin, masks: dict, segments=None, outline=None, size=480):
    """Colour-coded cell masks (drawn in dict order) plus optional boundary segment classes.

    ``segments`` maps a label to an array of segment endpoints (n, 2, 2).
    """
    x0, x1, y0, y1 = bbox
    svg = Svg(size, size * (y1 - y0) / (x1 - x0), (x0, y0, x1, y1))
    svg.rect(x0, y0, x1, y1, PALETTE["other"], "#000")
    for label, mask in masks.items():
        color = PALETTE.get(label, "#756bb1")
        for _, i, j0, j1 in mask_runs(label, mask):
            cx = origin[0] + i * h
            svg.rect(cx, origin[1] + j0 * h, cx + h, origin[1] + j1 * h, color)
    for label, segs in (segments or {}).items():
        color = PALETTE.get(label, "#000")
        for (a, b) in segs:
            svg.polyline([a[0], b[0]], [a[1], b[1]], color, 3.0)
    if outline is not None:
        pts = list(outline) + [outline[0]]
        svg.polyline([p[0] for p in pts], [p[1] for p in pts], "#000", 1.0)
    y = 14
    for label in list(masks) + list(segments or {}):
        svg.text(6, y, label)
        y += 12
    return svg.save(path)


def rays_svg(path, bbox, paths, regions: dict | None = None, h=None, origin=None, size=480):
    """Ray polylines over optional region masks."""
    x0, x1, y0, y1 = bbox
    svg = Svg(size, size * (y1 - y0) / (x1 - x0), (x0, y0, x1, y1))
    svg.rect(x0, y0, x1, y1, "#ffffff", "#000")
    for label, mask in (regions or {}).items():
        for _, i, j0, j1 in mask_runs(label, mask):
            cx = origin[0] + i * h
            svg.rect(cx, origin[1] + j0 * h, cx + h, origin[1] + j1 * h, PALETTE.get(label, "#fd8d3c"), opacity=0.6)
    for p in paths:
        p = np.asarray(p)
        svg.polyline(p[:, 0], p[:, 1], "#08519c", 1.0)
    return svg.save(path)


def heatmap_svg(path, field: np.ndarray, bbox, size=480, levels=16):
    """Diverging colour map of a 2D field, quantised to a fixed number of levels and run-length merged."""
    x0, x1, y0, y1 = bbox
    nx, ny = field.shape
    hx, hy = (x1 - x0) / nx, (y1 - y0) / ny
    svg = Svg(size, size * (y1 - y0) / (x1 - x0), (x0, y0, x1, y1))
    m = float(np.abs(field).max()) or 1.0
    q = np.clip(np.round((field / m) * (levels // 2)), -(levels // 2), levels // 2).astype(int)
    for i in range(nx):
        j = 0
        while j < ny:
            k = j
            while k + 1 < ny and q[i, k + 1] == q[i, j]:
                k += 1
            v = q[i, j] / (levels // 2)
            if v != 0:
                c = int(round(255 * (1 - abs(v))))
                color = f"#ff{c:02x}{c:02x}" if v > 0 else f"#{c:02x}{c:02x}ff"
                svg.rect(x0 + i * hx, y0 + j * hy, x0 + (i + 1) * hx, y0 + (k + 1) * hy, color)
            j = k + 1
    svg.rect(x0, y0, x1, y1, "none", "#000")
    svg.text(6, 14, f"max |u| = {m:.4e}")
    return svg.save(path)


def curve_svg(path, x, ys: dict, logy=False, size=(560, 360), markers=False):
    """Line (or marker) plot of several series against x."""
    x = np.asarray(x, float)
    series = {k: np.asarray(v, float) for k, v in ys.items()}
    if logy:
        series = {k: np.log10(np.maximum(v, 1e-300)) for k, v in series.items()}
    lo = min(float(np.min(v)) for v in series.values())
    hi = max(float(np.max(v)) for v in series.values())
    if hi == lo:
        hi = lo + 1.0
    svg = Svg(size[0], size[1], (float(x.min()), lo, float(x.max()) if x.max() > x.min() else float(x.min()) + 1, hi), margin=0.1)
    svg.rect(svg.view[0], lo, svg.view[2], hi, "none", "#000")
    colors = ["#08519c", "#d94801", "#31a354", "#756bb1", "#e31a1c"]
    for k, (name, v) in enumerate(series.items()):
        c = colors[k % len(colors)]
        if markers:
            for a, b in zip(x, v):
                svg.circle(a, b, 2.0, c)
        else:
            step = max(1, len(x) // 2000)
            svg.polyline(x[::step], v[::step], c, 1.2)
        svg.text(size[0] * 0.12, 14 + 12 * k, ("log10 " if logy else "") + name)
    svg.text(4, size[1] - 4, f"x [{x.min():.4g}, {x.max():.4g}]  y [{lo:.4g}, {hi:.4g}]")
    return svg.save(path)
