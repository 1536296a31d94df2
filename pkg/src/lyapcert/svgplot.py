"""SVG rendering of 2D certificates: nested curves, sign coloring, orbits."""

from __future__ import annotations

import os
import tempfile
from typing import List, Optional

import numpy as np

__all__ = ["render_svg"]

_SIZE = 640.0
_MARGIN = 24.0


def _mapper(box):
    (xlo, xhi), (ylo, yhi) = box
    span = max(xhi - xlo, yhi - ylo)
    scale = (_SIZE - 2 * _MARGIN) / span

    def to_svg(pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        sx = _MARGIN + (pts[:, 0] - xlo) * scale
        sy = _MARGIN + (yhi - pts[:, 1]) * scale
        return np.column_stack([sx, sy])

    return to_svg


def _fmt(v: float) -> str:
    return format(float(v), ".3f")


def _path(pts: np.ndarray, close: bool) -> str:
    coords = " L ".join(f"{_fmt(p[0])} {_fmt(p[1])}" for p in pts)
    return f"M {coords}" + (" Z" if close else "")


def render_svg(box, surfaces: List, S_values: List[np.ndarray],
               tols: List[float], x0, out_path,
               trajectories: Optional[List[np.ndarray]] = None) -> None:
    """Write an SVG: level curves with per-vertex sign dots and an x0 marker.

    Vertices with S >= 0 are green, S < -tol red, the noise band in
    between gray.  Optional trajectories are drawn as thin blue paths.
    """
    to_svg = _mapper(box)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{int(_SIZE)}" '
        f'height="{int(_SIZE)}" viewBox="0 0 {int(_SIZE)} {int(_SIZE)}">',
        f'<rect x="0" y="0" width="{int(_SIZE)}" height="{int(_SIZE)}" fill="white"/>',
    ]
    corners = np.array([[box[0][0], box[1][0]], [box[0][1], box[1][1]]])
    c = to_svg(corners)
    parts.append(
        f'<rect x="{_fmt(min(c[:, 0]))}" y="{_fmt(min(c[:, 1]))}" '
        f'width="{_fmt(abs(c[1, 0] - c[0, 0]))}" height="{_fmt(abs(c[1, 1] - c[0, 1]))}" '
        f'fill="none" stroke="#999" stroke-width="1"/>')

    if trajectories:
        for traj in trajectories:
            pts = to_svg(traj)
            parts.append(
                f'<path d="{_path(pts, False)}" fill="none" stroke="#4477cc" '
                f'stroke-width="0.7" opacity="0.6"/>')

    for H, S, tol in zip(surfaces, S_values, tols):
        pts = to_svg(H.vertices)
        parts.append(
            f'<path d="{_path(pts, True)}" fill="none" stroke="#333" '
            f'stroke-width="1.2"/>')
        for p, s in zip(pts, S):
            if s >= 0:
                color = "#1a9940"
            elif s < -tol:
                color = "#cc2222"
            else:
                color = "#999999"
            parts.append(
                f'<circle cx="{_fmt(p[0])}" cy="{_fmt(p[1])}" r="1.4" fill="{color}"/>')

    m = to_svg(np.asarray(x0, dtype=float))[0]
    parts.append(
        f'<path d="M {_fmt(m[0] - 6)} {_fmt(m[1])} L {_fmt(m[0] + 6)} {_fmt(m[1])} '
        f'M {_fmt(m[0])} {_fmt(m[1] - 6)} L {_fmt(m[0])} {_fmt(m[1] + 6)}" '
        f'stroke="black" stroke-width="1.5"/>')
    parts.append("</svg>")
    data = "\n".join(parts) + "\n"

    out_path = os.fspath(out_path)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(out_path) or ".",
                               prefix=".svg-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, out_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
