"""Tiny deterministic SVG emitter for plots and stick-figure montages.

Hand-rolled on purpose: output must be byte-stable across runs and
platforms, so every coordinate is formatted with a fixed precision and
elements are written in a fixed order.
"""

from __future__ import annotations

import numpy as np

from .graphs import SKELETON_BONES

PALETTE = ("#1b6ca8", "#d1495b", "#3a7d44", "#e09f3e", "#6d597a",
           "#468189", "#b5446e", "#4a4e69")


def _fmt(v: float) -> str:
    return f"{float(v):.2f}"


class SvgCanvas:
    def __init__(self, width: float, height: float):
        self.width = width
        self.height = height
        self.elements: list[str] = []

    def line(self, x1, y1, x2, y2, color: str, width: float = 1.5):
        self.elements.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" '
            f'y2="{_fmt(y2)}" stroke="{color}" stroke-width="{_fmt(width)}" '
            f'stroke-linecap="round"/>'
        )

    def polyline(self, points, color: str, width: float = 1.5):
        pts = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in points)
        self.elements.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{_fmt(width)}"/>'
        )

    def circle(self, cx, cy, r, color: str):
        self.elements.append(
            f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(r)}" '
            f'fill="{color}"/>'
        )

    def rect(self, x, y, w, h, color: str, fill: str = "none"):
        self.elements.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
            f'height="{_fmt(h)}" stroke="{color}" fill="{fill}"/>'
        )

    def text(self, x, y, content: str, size: float = 10.0,
             color: str = "#222222"):
        self.elements.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-family="monospace" '
            f'font-size="{_fmt(size)}" fill="{color}">{content}</text>'
        )

    def render(self) -> str:
        head = (
            f'<svg xmlns="http://www.w3.org/2000/svg" '
            f'width="{_fmt(self.width)}" height="{_fmt(self.height)}" '
            f'viewBox="0 0 {_fmt(self.width)} {_fmt(self.height)}">'
        )
        body = "\n".join(self.elements)
        return head + "\n" + body + "\n</svg>\n"

    def save(self, path: str):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())


def draw_skeleton(canvas: SvgCanvas, keypoints: np.ndarray, color: str,
                  width: float = 1.5, radius: float = 2.0):
    """Stick figure from a (14, 2) keypoint array; NaN entries are skipped."""
    kp = np.asarray(keypoints, dtype=np.float64)
    for a, b in SKELETON_BONES:
        if np.isnan(kp[a]).any() or np.isnan(kp[b]).any():
            continue
        canvas.line(kp[a, 0], kp[a, 1], kp[b, 0], kp[b, 1], color, width)
    for j in range(kp.shape[0]):
        if np.isnan(kp[j]).any():
            continue
        canvas.circle(kp[j, 0], kp[j, 1], radius, color)


def render_montage(shapes: np.ndarray, path: str, cell: float = 120.0,
                   shape_scale: float = 40.0):
    """Grid of mean cluster shapes: one column per cluster.

    ``shapes`` is (k, num_parts, 2) in torso-normalized units centred on
    the anchor part (only the first 14 rows are drawn as a skeleton).
    """
    k = shapes.shape[0]
    canvas = SvgCanvas(cell * k, cell)
    for c in range(k):
        cx = cell * c + cell / 2.0
        cy = cell / 2.0
        canvas.rect(cell * c + 1, 1, cell - 2, cell - 2, "#cccccc")
        canvas.text(cell * c + 6, 14, f"type {c}", 10)
        kp = shapes[c, :14] * shape_scale + np.array([cx, cy])
        draw_skeleton(canvas, kp, PALETTE[c % len(PALETTE)])
    canvas.save(path)


def render_curves(curves: dict[str, np.ndarray], thresholds: np.ndarray,
                  path: str, title: str = "",
                  width: float = 360.0, height: float = 260.0):
    """Detection-rate curves, one per method, on shared [0, 0.5] x [0, 100]
    axes."""
    margin = 36.0
    plot_w = width - 2 * margin
    plot_h = height - 2 * margin
    canvas = SvgCanvas(width, height)
    canvas.rect(margin, margin, plot_w, plot_h, "#333333")
    if title:
        canvas.text(margin, margin - 8, title, 11)
    for i, frac in enumerate((0.0, 0.25, 0.5)):
        x = margin + plot_w * frac / 0.5
        canvas.text(x - 8, height - margin + 14, f"{frac:.2f}", 9)
    for rate in (0, 50, 100):
        y = margin + plot_h * (1.0 - rate / 100.0)
        canvas.text(4, y + 3, f"{rate}", 9)
    for mi, (method, curve) in enumerate(curves.items()):
        color = PALETTE[mi % len(PALETTE)]
        pts = []
        for t, r in zip(thresholds, curve):
            x = margin + plot_w * float(t) / 0.5
            y = margin + plot_h * (1.0 - float(r) / 100.0)
            pts.append((x, y))
        canvas.polyline(pts, color)
        canvas.text(margin + 6, margin + 14 + 12 * mi, method, 9, color)
    canvas.save(path)


def render_pose(image_size: tuple[int, int], poses: dict[str, np.ndarray],
                path: str):
    """Predicted skeleton(s) over an empty frame of the image's size."""
    h, w = image_size
    canvas = SvgCanvas(float(w), float(h))
    canvas.rect(0.5, 0.5, w - 1.0, h - 1.0, "#999999")
    for mi, (label, kp) in enumerate(poses.items()):
        color = PALETTE[mi % len(PALETTE)]
        draw_skeleton(canvas, kp, color)
        canvas.text(6, 14 + 12 * mi, label, 10, color)
    canvas.save(path)
