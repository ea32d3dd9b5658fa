"""Exact W1 between equal-size uniform point clouds, and checks against it.

For two clouds of ``n`` points with weight ``1/n`` each, an optimal transport
plan can always be taken to be a permutation, so W1 reduces to a min-cost
perfect matching on the Euclidean distance matrix.

A *critic* here is any callable mapping a ``(batch, dim)`` array or node to a
``(batch,)`` node of scores, such as :func:`lipgan.nn.critic`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad

Critic = Callable[[ad.Node], ad.Node]

DEGENERATE_NORM = 1e-8


def as_cloud(points, name: str = "cloud") -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError(f"{name} must be a nonempty (n, dim) array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise ValueError(f"{name} contains non-finite coordinates")
    return pts


def load_cloud(path: str | Path) -> np.ndarray:
    """Read a cloud: a header line with the dimension, then one point per line."""
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines:
        raise ValueError(f"{path}: empty point cloud file")
    dim = int(lines[0])
    rows = []
    for i, ln in enumerate(lines[1:], start=2):
        vals = [float(t) for t in ln.split()]
        if len(vals) != dim:
            raise ValueError(f"{path}: point {i - 1} has {len(vals)} coordinates, expected {dim}")
        rows.append(vals)
    return as_cloud(np.array(rows).reshape(len(rows), dim), str(path))


def save_cloud(points, path: str | Path) -> None:
    pts = as_cloud(points)
    body = "\n".join(" ".join(repr(float(c)) for c in p) for p in pts)
    Path(path).write_text(f"{pts.shape[1]}\n{body}\n")


def pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1))


def min_cost_assignment(cost: np.ndarray) -> np.ndarray:
    """Row-to-column assignment minimizing total cost on a square matrix.

    Shortest augmenting paths with row/column potentials (Hungarian method),
    O(n^3). Returns ``col`` such that row ``i`` is assigned column ``col[i]``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    if n != m:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    match = np.zeros(n + 1, dtype=int)  # match[j] = row (1-based) assigned to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    col = np.empty(n, dtype=int)
    col[match[1:] - 1] = np.arange(n)
    return col


@dataclass
class TransportPlan:
    """A permutation plan: ``a[i]`` is transported to ``b[matching[i]]``."""

    matching: np.ndarray
    total_cost: float
    distances: np.ndarray = field(repr=False)

    def pairs(self) -> list[tuple[int, int]]:
        return [(i, int(j)) for i, j in enumerate(self.matching)]


def exact_w1(a, b) -> tuple[float, TransportPlan]:
    a = as_cloud(a, "a")
    b = as_cloud(b, "b")
    if a.shape != b.shape:
        raise ValueError(f"clouds must have equal size and dimension, got {a.shape} and {b.shape}")
    dist = pairwise_distances(a, b)
    col = min_cost_assignment(dist)
    matched = dist[np.arange(len(col)), col]
    w1 = float(matched.mean())
    return w1, TransportPlan(col, w1, matched)


# -- checks against the optimal plan ----------------------------------------------


def _scores(f: Critic, x: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return f(ad.Node(x)).value.reshape(-1)


def input_gradients(f: Critic, x: np.ndarray) -> np.ndarray:
    """``d f / d x`` for each row of ``x``."""
    xv = ad.variable(np.asarray(x, dtype=np.float64))
    (g,) = ad.backward(ad.sum(f(xv)), [xv])
    return g.value


def dual_objective(f: Critic, a, b) -> float:
    """Mean score over ``a`` minus mean score over ``b``."""
    return float(_scores(f, as_cloud(a)).mean() - _scores(f, as_cloud(b)).mean())


@dataclass
class AlignmentReport:
    cosines: np.ndarray  # (pairs, t) cosine between gradient and transport direction
    norm_deviation: np.ndarray  # (pairs, t) |grad norm - 1|
    pairs: list[tuple[int, int]]
    skipped: list[tuple[int, int]]
    degenerate: bool

    @property
    def min_cosine(self) -> float:
        return float(self.cosines.min()) if self.cosines.size else float("nan")

    @property
    def mean_cosine(self) -> float:
        return float(self.cosines.mean()) if self.cosines.size else float("nan")


def check_proposition1(
    f: Critic, plan: TransportPlan, real, fake, t_grid=None
) -> AlignmentReport:
    """Compare ``grad f`` along each matched segment with the transport direction.

    ``plan`` must come from ``exact_w1(real, fake)``. At ``x_t = t*real +
    (1-t)*fake`` the gradient of an optimal critic is the unit vector from the
    fake point to its matched real point. Pairs with coinciding endpoints are
    skipped; gradients with norm below 1e-8 count as cosine 0 and mark the
    report degenerate.
    """
    real, fake = as_cloud(real, "real"), as_cloud(fake, "fake")
    t_grid = np.linspace(0.0, 1.0, 11) if t_grid is None else np.asarray(t_grid, dtype=np.float64)
    pairs, skipped, points, dirs = [], [], [], []
    for i, j in plan.pairs():
        d = real[i] - fake[j]
        dn = np.linalg.norm(d)
        if dn == 0:
            skipped.append((i, j))
            continue
        pairs.append((i, j))
        for t in t_grid:
            points.append(t * real[i] + (1 - t) * fake[j])
            dirs.append(d / dn)
    if not pairs:
        empty = np.zeros((0, len(t_grid)))
        return AlignmentReport(empty, empty, pairs, skipped, True)
    grads = input_gradients(f, np.array(points))
    gnorm = np.linalg.norm(grads, axis=1)
    live = gnorm >= DEGENERATE_NORM
    cos = np.zeros(len(points))
    cos[live] = (grads[live] * np.array(dirs)[live]).sum(axis=1) / gnorm[live]
    shape = (len(pairs), len(t_grid))
    return AlignmentReport(
        cos.reshape(shape),
        np.abs(gnorm - 1.0).reshape(shape),
        pairs,
        skipped,
        degenerate=bool((~live).any() or skipped),
    )


@dataclass
class Lemma2Report:
    residuals: np.ndarray  # |(f(real) - f(fake)) / k - d| per matched pair
    distances: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max())

    @property
    def max_relative(self) -> float:
        """Largest residual as a fraction of its pair distance (zero-length pairs ignored)."""
        keep = self.distances > 0
        if not keep.any():
            return 0.0
        return float((self.residuals[keep] / self.distances[keep]).max())


def check_lemma2(f: Critic, plan: TransportPlan, real, fake, k_hat: float) -> Lemma2Report:
    """Residual of ``f(x) - f(y) = k * d(x, y)`` on matched pairs, scaled by ``1/k``."""
    if not k_hat > 0:
        raise ValueError(f"Lipschitz estimate must be positive, got {k_hat}")
    real, fake = as_cloud(real, "real"), as_cloud(fake, "fake")
    fr = _scores(f, real)
    ff = _scores(f, fake)
    idx = np.arange(len(plan.matching))
    diffs = fr[idx] - ff[plan.matching]
    dist = np.linalg.norm(real[idx] - fake[plan.matching], axis=1)
    return Lemma2Report(np.abs(diffs / k_hat - dist), dist)
