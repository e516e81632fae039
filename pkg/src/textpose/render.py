"""Skeleton rendering to SVG and PNG.

Both formats share one layout: source pixel coordinates are scaled onto a
fixed 256x256 canvas, edges are drawn only between joints that are both
visible, and invisible joints get gray markers (dashed outlines in SVG,
plain outlines in PNG, which has no dash primitive). SVG output is built
from fixed-format strings so identical poses produce identical bytes.
"""

from __future__ import annotations

from PIL import Image, ImageDraw

from .skeleton import COCO18, NUM_JOINTS

CANVAS = 256
JOINT_RADIUS = 3.0
EDGE_COLOR = "#1f77b4"
JOINT_COLOR = "#d62728"
HIDDEN_COLOR = "#9e9e9e"
BACKGROUND = "#ffffff"
FORMATS = ("svg", "png")


def layout(keypoints, width: int, height: int) -> list[tuple[float, float]]:
    """Map source-resolution pixel coordinates onto the 256x256 canvas."""
    if len(keypoints) != NUM_JOINTS:
        raise ValueError(f"expected {NUM_JOINTS} keypoints, got {len(keypoints)}")
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    sx, sy = CANVAS / width, CANVAS / height
    return [(float(x) * sx, float(y) * sy) for x, y in keypoints]


def _visible_edges(vis):
    for i, j in COCO18.edges:
        if vis[i] and vis[j]:
            yield i, j


def render_svg(keypoints, visibility, width: int = CANVAS,
               height: int = CANVAS) -> str:
    """Deterministic SVG text for one pose (pixel keypoints + 0/1 flags)."""
    points = layout(keypoints, width, height)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS}" '
        f'height="{CANVAS}" viewBox="0 0 {CANVAS} {CANVAS}">',
        f'<rect width="{CANVAS}" height="{CANVAS}" fill="{BACKGROUND}"/>',
    ]
    for i, j in _visible_edges(visibility):
        (x1, y1), (x2, y2) = points[i], points[j]
        lines.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" '
                     f'y2="{y2:.2f}" stroke="{EDGE_COLOR}" stroke-width="2"/>')
    for k, (cx, cy) in enumerate(points):
        if visibility[k]:
            lines.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" '
                         f'r="{JOINT_RADIUS:.1f}" fill="{JOINT_COLOR}"/>')
        else:
            lines.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" '
                         f'r="{JOINT_RADIUS:.1f}" fill="none" '
                         f'stroke="{HIDDEN_COLOR}" stroke-dasharray="2 2"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_png(keypoints, visibility, width: int = CANVAS,
               height: int = CANVAS) -> Image.Image:
    """PNG twin of render_svg: same layout, same joint centers."""
    points = layout(keypoints, width, height)
    image = Image.new("RGB", (CANVAS, CANVAS), BACKGROUND)
    draw = ImageDraw.Draw(image)
    for i, j in _visible_edges(visibility):
        draw.line([points[i], points[j]], fill=EDGE_COLOR, width=2)
    r = JOINT_RADIUS
    for k, (cx, cy) in enumerate(points):
        box = [cx - r, cy - r, cx + r, cy + r]
        if visibility[k]:
            draw.ellipse(box, fill=JOINT_COLOR)
        else:
            draw.ellipse(box, outline=HIDDEN_COLOR)
    return image


def render_record(record: dict, path, fmt: str = "svg") -> None:
    """Render one corpus-style record (pixel keypoints) to a file."""
    if fmt not in FORMATS:
        raise ValueError(f"format must be one of {FORMATS}, got {fmt!r}")
    keypoints = record["keypoints"]
    visibility = record["visibility"]
    width, height = record["width"], record["height"]
    if fmt == "svg":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(render_svg(keypoints, visibility, width, height))
    else:
        render_png(keypoints, visibility, width, height).save(path, format="PNG")


__all__ = ["render_svg", "render_png", "render_record", "layout",
           "CANVAS", "FORMATS"]
