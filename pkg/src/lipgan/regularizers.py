"""Penalty-based Lipschitz regularizers on interpolated samples.

All terms follow one sign convention: they are *added* to the objective the
discriminator maximizes (so they are non-positive for the pure penalties).
A trainer that minimizes a loss subtracts them exactly once.

``f`` is a critic: a callable taking a ``(batch, dim)`` node and returning
``(batch,)`` scores.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Node

Critic = Callable[[Node], Node]

KINDS = ("none", "clip", "sn", "gp", "lp", "maxgp", "maxal")
PENALTY_KINDS = ("gp", "lp", "maxgp", "maxal")


@dataclass
class RegularizerState:
    """Configuration plus the mutable multiplier and max-gradient buffer.

    ``buffer_points`` is kept sorted by ``buffer_norms`` descending; the norms
    are the values seen at the last evaluation and are recomputed under the
    current parameters every time the buffer is used.
    """

    kind: str = "maxgp"
    rho: float = 10.0
    target: float = 1.0
    lam: float = 0.0
    buffer_capacity: int = 0
    clip: float = 0.01
    buffer_points: np.ndarray | None = field(default=None, repr=False)
    buffer_norms: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown regularizer kind {self.kind!r}; expected one of {KINDS}")
        if not self.rho >= 0:
            raise ValueError(f"rho must be >= 0, got {self.rho}")
        if not self.target > 0:
            raise ValueError(f"target Lipschitz constant must be > 0, got {self.target}")
        if self.buffer_capacity < 0:
            raise ValueError("buffer_capacity must be >= 0")

    @property
    def buffer_size(self) -> int:
        return 0 if self.buffer_points is None else len(self.buffer_points)


@dataclass
class InterpolationBatch:
    points: np.ndarray
    real_index: np.ndarray
    fake_index: np.ndarray
    t: np.ndarray


def interpolate(real: np.ndarray, fake: np.ndarray, t: np.ndarray) -> np.ndarray:
    return t[:, None] * real + (1.0 - t)[:, None] * fake


def sample_interpolations(real, fake, rng: np.random.Generator) -> InterpolationBatch:
    """One point ``t*real + (1-t)*fake`` per aligned pair, ``t ~ U[0, 1]``."""
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    if real.shape != fake.shape or real.ndim != 2:
        raise ValueError(f"real and fake batches must match, got {real.shape} and {fake.shape}")
    t = rng.uniform(0.0, 1.0, size=real.shape[0])
    idx = np.arange(real.shape[0])
    return InterpolationBatch(interpolate(real, fake, t), idx, idx.copy(), t)


def _points(x) -> np.ndarray:
    return x.points if isinstance(x, InterpolationBatch) else np.asarray(x, dtype=np.float64)


def gradient_norms(f: Critic, points) -> Node:
    """``||grad_x f(x)||`` for each point, differentiable w.r.t. the critic's parameters."""
    x = ad.variable(_points(points))
    return ad.grad_norm(f(x), x)


# -- terms from precomputed gradient norms ---------------------------------------


def gp_term(norms: Node, rho: float, k: float = 1.0) -> Node:
    return ad.scalar_mul(ad.mean(ad.square(ad.sub(norms, k))), -rho / 2)


def lp_term(norms: Node, rho: float, k: float = 1.0) -> Node:
    return ad.scalar_mul(ad.mean(ad.square(ad.relu(ad.sub(norms, k)))), -rho / 2)


def maxgp_term(g_max: Node, rho: float, k: float = 1.0) -> Node:
    return ad.scalar_mul(ad.square(ad.sub(g_max, k)), -rho / 2)


def maxal_term(g_max: Node, lam: float, rho: float, k: float = 1.0) -> Node:
    gap = ad.sub(g_max, k)
    return ad.add(ad.scalar_mul(gap, lam), ad.scalar_mul(ad.square(gap), -rho / 2))


# -- public regularizers -----------------------------------------------------------


def reg_gp(f: Critic, points, rho: float, k: float = 1.0) -> Node:
    """``-(rho/2) * mean((||grad f|| - k)^2)``."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    return gp_term(gradient_norms(f, points), rho, k)


def reg_lp(f: Critic, points, rho: float, k: float = 1.0) -> Node:
    """One-sided variant: only norms above ``k`` are penalized."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    return lp_term(gradient_norms(f, points), rho, k)


def max_gradient(f: Critic, points, state: RegularizerState, update_buffer: bool = True) -> Node:
    """Largest gradient norm over the batch plus the buffer (re-evaluated).

    Ties go to the lowest index, batch points first. When the buffer is
    enabled it is refreshed with the global top-``buffer_capacity`` points.
    """
    pts = _points(points)
    if state.buffer_size:
        pts = np.concatenate([pts, state.buffer_points]) if pts.size else state.buffer_points
    if pts.size == 0:
        raise ValueError("max-gradient penalty needs a nonempty batch or buffer")
    norms = gradient_norms(f, pts)
    if update_buffer and state.buffer_capacity > 0:
        order = np.argsort(-norms.value, kind="stable")[: state.buffer_capacity]
        state.buffer_points = pts[order].copy()
        state.buffer_norms = norms.value[order].copy()
    return ad.max_reduce(norms)


def reg_maxgp(f: Critic, points, state: RegularizerState) -> Node:
    """``-(rho/2) * (max ||grad f|| - k)^2``; only the maximizer receives gradient."""
    return maxgp_term(max_gradient(f, points, state), state.rho, state.target)


def reg_maxal(f: Critic, points, state: RegularizerState) -> Node:
    """``lam * (g_max - k) - (rho/2) * (g_max - k)^2``."""
    return maxal_term(max_gradient(f, points, state), state.lam, state.rho, state.target)


def update_lambda(state: RegularizerState, g_max: float) -> RegularizerState:
    """Multiplier step ``lam <- lam - rho * (g_max - k)``."""
    state.lam = state.lam - state.rho * (float(g_max) - state.target)
    return state


def regularize(f: Critic, points, state: RegularizerState) -> tuple[Node | None, float | None]:
    """Dispatch on ``state.kind``; returns the term and the max gradient norm seen.

    Kinds enforced outside the objective (``none``, ``clip``, ``sn``) return
    ``(None, None)``.
    """
    kind = state.kind
    if kind in ("gp", "lp"):
        norms = gradient_norms(f, points)
        term = (gp_term if kind == "gp" else lp_term)(norms, state.rho, state.target)
        return term, float(norms.value.max())
    if kind in ("maxgp", "maxal"):
        g = max_gradient(f, points, state)
        if kind == "maxgp":
            term = maxgp_term(g, state.rho, state.target)
        else:
            term = maxal_term(g, state.lam, state.rho, state.target)
        return term, g.item()
    return None, None


def lipschitz_estimate(f: Critic, real, fake, n_samples: int, rng: np.random.Generator) -> float:
    """Largest gradient norm over ``n_samples`` fresh interpolation points.

    Real and fake points are paired uniformly at random, so the samples cover
    the whole interpolation support rather than one fixed pairing. The result
    is a lower bound on the Lipschitz constant over that support.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    real = np.asarray(real, dtype=np.float64)
    fake = np.asarray(fake, dtype=np.float64)
    ri = rng.integers(0, len(real), size=n_samples)
    fi = rng.integers(0, len(fake), size=n_samples)
    t = rng.uniform(0.0, 1.0, size=n_samples)
    x = ad.variable(interpolate(real[ri], fake[fi], t))
    (g,) = ad.backward(ad.sum(f(x)), [x])
    return float(np.sqrt((g.value**2).sum(axis=1)).max())


def predicted_k_star(w1: float, rho: float) -> float:
    """Maximizer ``w1/rho + 1`` of ``k*w1 - (rho/2)*(k - 1)^2``."""
    if rho == 0:
        raise ValueError("rho must be nonzero")
    if rho < 0 or w1 < 0:
        raise ValueError("expected rho > 0 and w1 >= 0")
    return w1 / rho + 1.0
