"""Multilayer perceptrons and the model-side Lipschitz mechanisms.

Weights are stored as ``(in, out)`` matrices so a layer computes
``x @ W + b`` on a batch of row vectors. Spectral normalization keeps one
left/right singular-vector pair per layer (``u`` of length ``in``, ``v`` of
length ``out``) that is refined by power iteration and persisted between
training steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node

CHECKPOINT_FORMAT = "lipgan-checkpoint"
CHECKPOINT_VERSION = 1

ACTIVATIONS: dict[str, Callable[[Node], Node]] = {
    "linear": ad.identity,
    "relu": ad.relu,
    "leaky_relu": lambda x: ad.leaky_relu(x, 0.2),
    "tanh": ad.tanh,
}


@dataclass
class Layer:
    weight: Node
    bias: Node
    activation: str = "linear"
    u: np.ndarray | None = None
    v: np.ndarray | None = None

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class ModelParams:
    layers: list[Layer]
    spectral_norm: bool = False
    sn_iters: int = 1

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a model needs at least one layer")
        for i, (a, b) in enumerate(zip(self.layers, self.layers[1:])):
            if a.out_dim != b.in_dim:
                raise ValueError(
                    f"layer {i} outputs {a.out_dim} features but layer {i + 1} expects {b.in_dim}"
                )
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def parameters(self) -> list[Node]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> ModelParams:
        layers = [
            Layer(
                ad.variable(l.weight.value.copy()),
                ad.variable(l.bias.value.copy()),
                l.activation,
                None if l.u is None else l.u.copy(),
                None if l.v is None else l.v.copy(),
            )
            for l in self.layers
        ]
        return ModelParams(layers, self.spectral_norm, self.sn_iters)


def _unit(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x)
    return x / n if n > 0 else x


def init_mlp(
    sizes: Sequence[int],
    rng: np.random.Generator,
    activation: str = "leaky_relu",
    output_activation: str = "linear",
    spectral_norm: bool = False,
    sn_iters: int = 1,
) -> ModelParams:
    """Uniform ``±1/sqrt(fan_in)`` initialization for every affine layer."""
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"invalid layer sizes {list(sizes)}")
    layers = []
    n = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        act = output_activation if i == n - 1 else activation
        layer = Layer(ad.variable(w), ad.variable(b), act)
        if spectral_norm:
            layer.u = _unit(rng.standard_normal(fan_in))
            layer.v = _unit(w.T @ layer.u)
        layers.append(layer)
    return ModelParams(layers, spectral_norm, sn_iters)


# -- spectral normalization -----------------------------------------------------


def power_iteration_sigma(
    w: np.ndarray, u: np.ndarray, iters: int = 1
) -> tuple[float, np.ndarray, np.ndarray]:
    """Estimate the top singular value of ``w`` by power iteration.

    Starts from the left vector ``u`` and returns ``(sigma, u, v)`` with both
    vectors of unit norm, ready to warm-start the next call. A zero matrix
    yields ``sigma == 0``.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    w = np.asarray(w, dtype=np.float64)
    u = _unit(np.asarray(u, dtype=np.float64))
    v = np.zeros(w.shape[1])
    for _ in range(iters):
        v = _unit(w.T @ u)
        u = _unit(w @ v)
    sigma = float(u @ w @ v)
    return sigma, u, v


def update_spectral_state(params: ModelParams, iters: int | None = None) -> None:
    """Run power iteration on every layer and store the refined vectors."""
    iters = params.sn_iters if iters is None else iters
    for layer in params.layers:
        if layer.u is None:
            raise ValueError("spectral-norm state is not initialized")
        _, layer.u, layer.v = power_iteration_sigma(layer.weight.value, layer.u, iters)


def apply_spectral_norm(params: ModelParams) -> list[tuple[Node, Node, str]]:
    """Effective ``(W / sigma(W), b, activation)`` triples for a forward pass.

    ``sigma`` is ``u^T W v`` with the stored vectors held constant, so the
    gradient flows through the normalization into ``W``. Biases are left
    untouched.
    """
    view = []
    for i, layer in enumerate(params.layers):
        if layer.u is None or layer.v is None:
            raise ValueError("spectral-norm state is not initialized")
        uv = Node(np.outer(layer.u, layer.v))
        sigma = ad.sum(ad.mul(layer.weight, uv))
        if not sigma.item() > 0:
            raise ValueError(f"layer {i}: spectral norm estimate is {sigma.item()}, cannot normalize")
        view.append((ad.div(layer.weight, sigma), layer.bias, layer.activation))
    return view


# -- forward -------------------------------------------------------------------


def mlp_forward(params: ModelParams, x) -> Node:
    """Apply the network to a ``(batch, in_dim)`` input."""
    x = x if isinstance(x, Node) else Node(x)
    if x.value.ndim != 2 or x.shape[1] != params.in_dim:
        raise ad.ShapeError("mlp_forward", x.shape, params.layers[0].weight.shape)
    if params.spectral_norm:
        view = apply_spectral_norm(params)
    else:
        view = [(l.weight, l.bias, l.activation) for l in params.layers]
    h = x
    for w, b, act in view:
        h = ACTIVATIONS[act](ad.add(ad.matmul(h, w), b))
    return h


def critic(params: ModelParams) -> Callable[[Node], Node]:
    """Wrap a scalar-output network as ``x -> (batch,)`` scores."""
    if params.out_dim != 1:
        raise ValueError(f"a critic needs one output, model has {params.out_dim}")

    def f(x):
        out = mlp_forward(params, x)
        return ad.reshape(out, (out.shape[0],))

    return f


# -- optimizers and clipping -----------------------------------------------------


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.0
    beta2: float = 0.9
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(state: AdamState, params: Sequence[Node], grads: Sequence[np.ndarray]) -> None:
    """One bias-corrected Adam update applied to ``params`` in place."""
    grads = [g.value if isinstance(g, Node) else np.asarray(g, dtype=np.float64) for g in grads]
    if len(grads) != len(params):
        raise ValueError(f"got {len(grads)} gradients for {len(params)} parameters")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ad.ShapeError("adam_step", p.shape, g.shape)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient passed to adam_step")
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        p.value = p.value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_weights(params: ModelParams, c: float) -> ModelParams:
    if not c > 0:
        raise ValueError(f"clip bound must be positive, got {c}")
    for p in params.parameters():
        np.clip(p.value, -c, c, out=p.value)
    return params


# -- checkpoints -----------------------------------------------------------------


def to_dict(params: ModelParams) -> dict:
    layers = []
    for i, l in enumerate(params.layers):
        entry = {
            "index": i,
            "activation": l.activation,
            "weight": {"shape": list(l.weight.shape), "data": l.weight.value.ravel().tolist()},
            "bias": {"shape": list(l.bias.shape), "data": l.bias.value.ravel().tolist()},
        }
        if l.u is not None:
            entry["sn_u"] = l.u.tolist()
            entry["sn_v"] = l.v.tolist()
        layers.append(entry)
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spectral_norm": params.spectral_norm,
        "sn_iters": params.sn_iters,
        "layers": layers,
    }


def from_dict(d: dict) -> ModelParams:
    if d.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a lipgan checkpoint")
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')}")
    layers = []
    for entry in sorted(d["layers"], key=lambda e: e["index"]):
        w = np.array(entry["weight"]["data"], dtype=np.float64).reshape(entry["weight"]["shape"])
        b = np.array(entry["bias"]["data"], dtype=np.float64).reshape(entry["bias"]["shape"])
        u = np.array(entry["sn_u"]) if "sn_u" in entry else None
        v = np.array(entry["sn_v"]) if "sn_v" in entry else None
        layers.append(Layer(ad.variable(w), ad.variable(b), entry["activation"], u, v))
    return ModelParams(layers, bool(d.get("spectral_norm", False)), int(d.get("sn_iters", 1)))


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    Path(path).write_text(json.dumps(to_dict(params)))


def load_checkpoint(path: str | Path) -> ModelParams:
    return from_dict(json.loads(Path(path).read_text()))
