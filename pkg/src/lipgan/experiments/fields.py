"""Gradient-field grids, increment paths, and a small SVG arrow plot."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..transport import input_gradients

FIELD_COLUMNS = ["x1", "x2", "df_dx1", "df_dx2", "grad_norm"]


def export_gradient_field(f, box: tuple[float, float, float, float], resolution) -> np.ndarray:
    """Rows ``(x1, x2, df/dx1, df/dx2, |grad f|)`` on a regular grid.

    ``box`` is ``(x1_min, x1_max, x2_min, x2_max)``. A 1x1 grid samples the
    box center.
    """
    nx, ny = (resolution, resolution) if np.isscalar(resolution) else resolution
    nx, ny = int(nx), int(ny)
    if nx < 1 or ny < 1:
        raise ValueError("grid resolution must be >= 1")
    x0, x1, y0, y1 = map(float, box)
    if x1 < x0 or y1 < y0:
        raise ValueError(f"invalid box {box}")

    def axis(lo, hi, n):
        return np.array([(lo + hi) / 2]) if n == 1 else np.linspace(lo, hi, n)

    gx, gy = np.meshgrid(axis(x0, x1, nx), axis(y0, y1, ny), indexing="xy")
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    try:
        g = input_gradients(f, pts)
    except Exception as exc:  # the model decides what input shapes it accepts
        raise ValueError(f"gradient field needs a model with 2-D input: {exc}") from exc
    if g.shape[1] != 2:
        raise ValueError(f"gradient field needs a model with 2-D input, got {g.shape[1]}-D")
    return np.column_stack([pts, g, np.linalg.norm(g, axis=1)])


def write_field_csv(rows: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_COLUMNS)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def write_field_svg(
    rows: np.ndarray,
    path: str | Path,
    real: np.ndarray | None = None,
    fake: np.ndarray | None = None,
    size: int = 480,
) -> None:
    """Arrows of unit length (scaled to the grid spacing) plus the two clouds."""
    xs, ys = rows[:, 0], rows[:, 1]
    pts = [rows[:, :2]] + [c for c in (real, fake) if c is not None]
    allp = np.concatenate(pts)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    span = float(max(hi[0] - lo[0], hi[1] - lo[1], 1e-9))
    pad = 0.05 * span
    lo = lo - pad
    scale = size / (span + 2 * pad)

    def px(p):
        return (p[0] - lo[0]) * scale, size - (p[1] - lo[1]) * scale

    n_side = max(int(round(np.sqrt(len(rows)))), 1)
    arrow = 0.4 * span / n_side
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for x, y, gx, gy, norm in rows:
        if norm < 1e-12:
            continue
        a = px((x, y))
        b = px((x + arrow * gx / norm, y + arrow * gy / norm))
        out.append(
            f'<line x1="{a[0]:.2f}" y1="{a[1]:.2f}" x2="{b[0]:.2f}" y2="{b[1]:.2f}" '
            'stroke="#555" stroke-width="1"/>'
        )
        out.append(f'<circle cx="{b[0]:.2f}" cy="{b[1]:.2f}" r="1.5" fill="#555"/>')
    for cloud, color in ((real, "#1f77b4"), (fake, "#d62728")):
        if cloud is None:
            continue
        for p in cloud:
            c = px(p)
            out.append(f'<circle cx="{c[0]:.2f}" cy="{c[1]:.2f}" r="5" fill="{color}"/>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


@dataclass
class IncrementPath:
    """Points ``x + eps * grad f(x)`` and their distances to every real point."""

    eps: np.ndarray
    points: np.ndarray
    distances: np.ndarray  # (len(eps), n_real)
    degenerate: bool

    @property
    def nearest(self) -> int:
        """Index of the real point closest to any point on the path."""
        step, j = np.unravel_index(np.argmin(self.distances), self.distances.shape)
        return int(j)

    def rows(self) -> list[list[float]]:
        return [[float(e), *map(float, p), *map(float, d)] for e, p, d in zip(self.eps, self.points, self.distances)]


def increment_eps_grid(distance: float, n: int = 32) -> np.ndarray:
    """``n`` evenly spaced step sizes over ``[0, 1.5 * distance]``."""
    return np.linspace(0.0, 1.5 * float(distance), n)


def export_increment_path(f, x, eps, targets) -> IncrementPath:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    targets = np.asarray(targets, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    g = input_gradients(f, x)[0]
    degenerate = bool(np.linalg.norm(g) < 1e-8)
    pts = x + eps[:, None] * g[None, :]
    dist = np.linalg.norm(pts[:, None, :] - targets[None, :, :], axis=-1)
    return IncrementPath(eps, pts, dist, degenerate)
