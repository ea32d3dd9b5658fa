"""Central finite differences for checking gradients.

These routines only evaluate forward values, so they stay independent of the
backward rules they are used to check.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Node


def central_difference(fn: Callable[[], float], arrays: Sequence[np.ndarray], step: float = 1e-5):
    """Numerical gradient of ``fn()`` w.r.t. each array, perturbing in place."""
    out = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = fn()
            flat[i] = orig - step
            lo = fn()
            flat[i] = orig
            gflat[i] = (hi - lo) / (2 * step)
        out.append(g)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm error scaled by the numeric gradient's max norm."""
    scale = max(float(np.abs(numeric).max()), 1e-8)
    return float(np.abs(analytic - numeric).max()) / scale


def random_mlp(
    rng: np.random.Generator,
    in_dim: int | None = None,
    max_layers: int = 3,
    max_width: int = 16,
    activation: str = "tanh",
) -> nn.ModelParams:
    """A scalar-output MLP with 1..max_layers affine layers of random widths."""
    n_layers = int(rng.integers(1, max_layers + 1))
    in_dim = int(rng.integers(1, max_width + 1)) if in_dim is None else in_dim
    sizes = [in_dim, *rng.integers(1, max_width + 1, size=n_layers - 1).tolist(), 1]
    params = nn.init_mlp(sizes, rng, activation=activation)
    # spread the weights so activations are not all near their linear regime
    for p in params.parameters():
        p.value = p.value * 1.5
    return params


def _scores(params: nn.ModelParams, x: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return nn.critic(params)(Node(x)).value


def check_first_order(params: nn.ModelParams, x: np.ndarray, step: float = 1e-5) -> float:
    """Worst relative error of d sum(f(x)) / d(params, x) against central differences."""
    leaves = params.parameters()
    xv = ad.variable(x)
    out = ad.sum(nn.critic(params)(xv))
    analytic = [g.value for g in ad.backward(out, [*leaves, xv])]
    arrays = [p.value for p in leaves] + [xv.value]
    numeric = central_difference(lambda: float(_scores(params, xv.value).sum()), arrays, step)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def penalty_value(params: nn.ModelParams, x: np.ndarray, k: float = 1.0) -> float:
    """``mean((||grad_x f|| - k)^2)`` using first-order gradients only."""
    xv = ad.variable(x)
    (g,) = ad.backward(ad.sum(nn.critic(params)(xv)), [xv])
    norms = np.sqrt((g.value**2).sum(axis=1))
    return float(((norms - k) ** 2).mean())


def check_second_order(params: nn.ModelParams, x: np.ndarray, step: float = 1e-5) -> float:
    """Worst relative error of d penalty / d params via double backprop."""
    leaves = params.parameters()
    xv = ad.variable(x)
    norms = ad.grad_norm(nn.critic(params)(xv), xv)
    pen = ad.mean(ad.square(ad.sub(norms, 1.0)))
    analytic = [g.value for g in ad.backward(pen, leaves)]
    numeric = central_difference(lambda: penalty_value(params, x), [p.value for p in leaves], step)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))
