"""Bird's-eye-view SVG figures of a detection run."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .attribution import DetectionResult, wedge_arrays_of_cells
from .scene_io import LabeledObject
from .shadow_detect import cell_footprint

SCALE = 20.0  # px per metre
MARGIN = 3.0  # metres around the RoI


class _View:
    """Sensor x points up the page, sensor y points left."""

    def __init__(self, roi):
        self.x_lo, self.x_hi = roi.x_min - MARGIN, roi.x_max + MARGIN
        self.y_lo, self.y_hi = -roi.y_half_width - MARGIN, roi.y_half_width + MARGIN
        self.width = (self.y_hi - self.y_lo) * SCALE
        self.height = (self.x_hi - self.x_lo) * SCALE

    def pt(self, x: float, y: float) -> str:
        return f"{(self.y_hi - y) * SCALE:.2f},{(self.x_hi - x) * SCALE:.2f}"

    def poly(self, xy) -> str:
        return " ".join(self.pt(x, y) for x, y in xy)


def _sector(w_lo: float, w_hi: float, r_lo: float, r_hi: float, n: int = 6) -> np.ndarray:
    a = np.linspace(w_lo, w_hi, n)
    outer = np.column_stack([r_hi * np.cos(a), r_hi * np.sin(a)])
    inner = np.column_stack([r_lo * np.cos(a[::-1]), r_lo * np.sin(a[::-1])])
    return np.vstack([outer, inner])


def render_svg(result: DetectionResult, labels: list[LabeledObject] = (), hidden_ids=(),
               slab_points: np.ndarray | None = None) -> str:
    roi = result.config.roi
    v = _View(roi)
    hidden = set(hidden_ids)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{v.width:.0f}" height="{v.height:.0f}" '
           f'viewBox="0 0 {v.width:.2f} {v.height:.2f}">',
           f'<rect x="0" y="0" width="{v.width:.2f}" height="{v.height:.2f}" fill="white"/>']

    out.append('<g id="grid" stroke="#dddddd" stroke-width="0.5">')
    for x in range(math.ceil(v.x_lo), math.floor(v.x_hi) + 1):
        out.append(f'<polyline points="{v.poly([(x, v.y_lo), (x, v.y_hi)])}"/>')
    for y in range(math.ceil(v.y_lo), math.floor(v.y_hi) + 1):
        out.append(f'<polyline points="{v.poly([(v.x_lo, y), (v.x_hi, y)])}"/>')
    roi_rect = [(roi.x_min, -roi.y_half_width), (roi.x_max, -roi.y_half_width),
                (roi.x_max, roi.y_half_width), (roi.x_min, roi.y_half_width)]
    out.append(f'<polygon id="roi" points="{v.poly(roi_rect)}" fill="none" stroke="#888888"/>')
    out.append("</g>")

    out.append('<g id="slab_points" fill="#555555">')
    if slab_points is not None:
        for x, y in np.asarray(slab_points)[:, :2]:
            out.append(f'<circle cx="{(v.y_hi - y) * SCALE:.2f}" cy="{(v.x_hi - x) * SCALE:.2f}" r="0.8"/>')
    out.append("</g>")

    out.append('<g id="shadow_cells" fill="#3b6fb6" fill-opacity="0.45">')
    for c in result.shadow_clusters:
        for ix, iy in c.cells.tolist():
            out.append(f'<polygon points="{v.poly(cell_footprint(ix, iy, roi))}"/>')
    out.append("</g>")

    out.append('<g id="wedges" fill="#f0a030" fill-opacity="0.04" stroke="none">')
    for c in result.shadow_clusters:
        w, _ = wedge_arrays_of_cells(c.cells[::result.config.cell_stride], roi, result.config.range_min)
        for lo, hi, rmax, rmin in zip(w.az_min, w.az_max, w.range_max, w.range_min):
            if rmax > rmin:
                out.append(f'<polygon points="{v.poly(_sector(lo, hi, rmin, rmax))}"/>')
    out.append("</g>")

    out.append('<g id="gt_boxes" fill="none" stroke="#2a9d3a" stroke-width="1.5">')
    for o in labels:
        dash = ' stroke-dasharray="4,3"' if o.id in hidden else ""
        out.append(f'<polygon points="{v.poly(o.box.footprint())}"{dash}/>')
    out.append("</g>")

    out.append('<g id="obstacle_boxes" fill="none" stroke="#d62828" stroke-width="1.5">')
    for ob in result.obstacles:
        out.append(f'<polygon points="{v.poly(ob.box.footprint())}"/>')
    out.append("</g>")

    ox, oy = (v.y_hi) * SCALE, (v.x_hi) * SCALE
    out.append(f'<g id="origin"><circle cx="{ox:.2f}" cy="{oy:.2f}" r="4" fill="black"/></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_bev(result: DetectionResult, labels, path, hidden_ids=(), slab_points=None) -> Path:
    path = Path(path)
    path.write_text(render_svg(result, labels, hidden_ids, slab_points), encoding="utf-8")
    return path
