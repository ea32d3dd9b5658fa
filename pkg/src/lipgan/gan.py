"""Adversarial objectives and the two training regimes.

``fit_discriminator`` trains a critic alone against two fixed point clouds and
evaluates it against the exact transport oracle as it goes.
``train_gan`` alternates ``d_steps`` critic updates with one generator update.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Node
from .config import ObjectiveKind, TrainConfig
from .metrics import MetricsRecord
from .regularizers import (
    PENALTY_KINDS,
    RegularizerState,
    lipschitz_estimate,
    predicted_k_star,
    regularize,
    sample_interpolations,
    update_lambda,
)
from .transport import as_cloud, check_lemma2, check_proposition1, dual_objective, exact_w1

Sampler = Callable[[np.random.Generator, int], np.ndarray]


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite or exploding loss; partial metrics are attached."""

    def __init__(self, message: str, records: list[MetricsRecord]):
        super().__init__(message)
        self.records = records


def d_loss(objective, f_real: Node, f_fake: Node) -> Node:
    """Discriminator loss to minimize, before any regularizer."""
    objective = ObjectiveKind(objective)
    if objective is ObjectiveKind.WGAN:
        return ad.sub(ad.mean(f_fake), ad.mean(f_real))
    if objective is ObjectiveKind.HINGE:
        return ad.add(ad.mean(ad.relu(ad.sub(1.0, f_real))), ad.mean(ad.relu(ad.add(1.0, f_fake))))
    # sigmoid cross-entropy on logits, real -> 1 and fake -> 0
    return ad.add(ad.mean(ad.softplus(ad.neg(f_real))), ad.mean(ad.softplus(f_fake)))


def g_loss(objective, f_fake: Node) -> Node:
    objective = ObjectiveKind(objective)
    if objective is ObjectiveKind.VANILLA:
        # non-saturating: -log sigmoid(f) == softplus(-f)
        return ad.mean(ad.softplus(ad.neg(f_fake)))
    return ad.neg(ad.mean(f_fake))


def lr_scale(config: TrainConfig, it: int) -> float:
    """Step decay: halve after each ``decay_every`` fraction, at most ``max_halvings`` times."""
    if config.decay == "none":
        return 1.0
    interval = max(int(config.iterations * config.decay_every), 1)
    return 0.5 ** min(it // interval, config.max_halvings)


def _rng_streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    train_seq, eval_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(train_seq), np.random.default_rng(eval_seq)


def discriminator_step(
    params: nn.ModelParams,
    opt: nn.AdamState,
    state: RegularizerState,
    objective,
    real_batch: np.ndarray,
    fake_batch: np.ndarray,
    rng: np.random.Generator,
) -> tuple[float, float | None]:
    """One regularized critic update. Returns ``(d_loss, g_max)``.

    For ``maxal`` the multiplier is updated after the parameter step using the
    ``g_max`` measured for this step's loss.
    """
    if state.kind == "sn":
        nn.update_spectral_state(params)
    f = nn.critic(params)
    loss = d_loss(objective, f(Node(real_batch)), f(Node(fake_batch)))
    base = loss.item()
    term, g_max = regularize(f, sample_interpolations(real_batch, fake_batch, rng), state)
    if term is not None:
        loss = ad.sub(loss, term)
    if not math.isfinite(loss.item()):
        raise FloatingPointError(f"non-finite discriminator loss {loss.item()}")
    plist = params.parameters()
    grads = ad.backward(loss, plist)
    nn.adam_step(opt, plist, grads)
    if state.kind == "clip":
        nn.clip_weights(params, state.clip)
    if state.kind == "maxal":
        update_lambda(state, g_max)
    return base, g_max


@dataclass
class CloudEvaluator:
    """Oracle measurements of a critic against two fixed clouds."""

    real: np.ndarray
    fake: np.ndarray
    t_grid: np.ndarray
    n_samples: int
    w1: float = field(init=False)

    def __post_init__(self):
        self.w1, self.plan = exact_w1(self.real, self.fake)

    def evaluate(self, f, rng: np.random.Generator, record: MetricsRecord) -> MetricsRecord:
        record.w1 = self.w1
        record.dual_objective = dual_objective(f, self.real, self.fake)
        k_hat = lipschitz_estimate(f, self.real, self.fake, self.n_samples, rng)
        record.lipschitz_estimate = k_hat
        prop1 = check_proposition1(f, self.plan, self.real, self.fake, self.t_grid)
        if prop1.pairs:
            record.prop1_min_cosine = prop1.min_cosine
            record.prop1_mean_cosine = prop1.mean_cosine
        if k_hat > 0:
            record.lemma2_max_residual = check_lemma2(
                f, self.plan, self.real, self.fake, k_hat
            ).max_relative
        return record


def _k_star(state: RegularizerState, w1: float) -> float | None:
    if state.kind in ("gp", "lp", "maxgp") and state.rho > 0:
        # the drift law shifted to a general target k: k + w1/rho
        return predicted_k_star(w1, state.rho) - 1.0 + state.target
    return None


def fit_discriminator(
    real,
    fake,
    config: TrainConfig,
    run: str = "main",
    params: nn.ModelParams | None = None,
) -> tuple[nn.ModelParams, list[MetricsRecord], RegularizerState]:
    """Train a critic to separate two fixed clouds of equal size.

    Each step draws ``batch_size`` points from each cloud with replacement.
    Metrics are evaluated every ``eval_every`` iterations and at the last one.
    Raises :class:`TrainingDiverged` on a non-finite loss or one whose
    magnitude exceeds ``divergence_threshold``.
    """
    real = as_cloud(real, "real")
    fake = as_cloud(fake, "fake")
    train_rng, eval_rng = _rng_streams(config.seed)
    state = config.regularizer.new_state()
    if params is None:
        params = nn.init_mlp(
            [real.shape[1], *config.d_hidden, 1],
            train_rng,
            activation=config.activation,
            spectral_norm=state.kind == "sn",
            sn_iters=config.sn_iters,
        )
    lr = config.d_learning_rate(gan=False)
    opt = nn.AdamState(lr=lr, beta1=config.beta1, beta2=config.beta2)
    evaluator = CloudEvaluator(
        real, fake, np.linspace(0.0, 1.0, config.t_grid), config.lipschitz_samples
    )
    k_star = _k_star(state, evaluator.w1)
    records: list[MetricsRecord] = []
    start = time.perf_counter()
    for it in range(config.iterations):
        opt.lr = lr * lr_scale(config, it)
        rb = real[train_rng.integers(0, len(real), config.batch_size)]
        fb = fake[train_rng.integers(0, len(fake), config.batch_size)]
        try:
            loss, g_max = discriminator_step(params, opt, state, config.objective, rb, fb, train_rng)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"iteration {it}: {exc}", records) from exc
        if abs(loss) > config.divergence_threshold:
            raise TrainingDiverged(
                f"iteration {it}: |d_loss| = {abs(loss):.3g} exceeds {config.divergence_threshold:.3g}",
                records,
            )
        if it % config.eval_every == 0 or it == config.iterations - 1:
            rec = MetricsRecord(
                iteration=it,
                run=run,
                d_loss=loss,
                lam=state.lam if state.kind == "maxal" else None,
                g_max=g_max,
                k_star=k_star,
            )
            evaluator.evaluate(nn.critic(params), eval_rng, rec)
            if config.record_wall_clock:
                rec.wall_ms = (time.perf_counter() - start) * 1e3
            records.append(rec)
    return params, records, state


def mixture_sampler(
    centers, std: float = 0.05
) -> Sampler:
    """Sampler for an equal-weight isotropic Gaussian mixture."""
    centers = np.asarray(centers, dtype=np.float64)

    def sample(rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.integers(0, len(centers), size=n)
        return centers[idx] + std * rng.standard_normal((n, centers.shape[1]))

    return sample


def ring_centers(n_modes: int = 8, radius: float = 0.8) -> np.ndarray:
    angles = 2 * np.pi * np.arange(n_modes) / n_modes
    return radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def generate(gen: nn.ModelParams, z: np.ndarray) -> np.ndarray:
    with ad.no_grad():
        return nn.mlp_forward(gen, Node(z)).value


@dataclass
class GanResult:
    generator: nn.ModelParams
    discriminator: nn.ModelParams
    records: list[MetricsRecord]
    state: RegularizerState
    d_updates: int = 0
    g_updates: int = 0


def train_gan(
    config: TrainConfig,
    sampler: Sampler,
    eval_size: int = 64,
    run: str = "main",
    freeze_generator: bool = False,
) -> GanResult:
    """Alternating WGAN-style training of a generator and a critic.

    One iteration is ``d_steps`` critic updates followed by one generator
    update (skipped when ``freeze_generator``). Every ``eval_every`` iterations
    the exact W1 between ``eval_size`` generated points (fixed noise) and a
    held-out real cloud of the same size is recorded.
    """
    train_rng, eval_rng = _rng_streams(config.seed)
    state = config.regularizer.new_state()
    data_dim = sampler(np.random.default_rng(0), 1).shape[1]
    gen = nn.init_mlp(
        [config.prior_dim, *config.g_hidden, data_dim],
        train_rng,
        activation=config.activation,
        output_activation="tanh",
    )
    disc = nn.init_mlp(
        [data_dim, *config.d_hidden, 1],
        train_rng,
        activation=config.activation,
        spectral_norm=state.kind == "sn",
        sn_iters=config.sn_iters,
    )
    lr_d = config.d_learning_rate(gan=True)
    d_opt = nn.AdamState(lr=lr_d, beta1=config.beta1, beta2=config.beta2)
    g_opt = nn.AdamState(lr=config.lr_g, beta1=config.beta1, beta2=config.beta2)
    eval_real = sampler(eval_rng, eval_size)
    eval_z = eval_rng.standard_normal((eval_size, config.prior_dim))
    result = GanResult(gen, disc, [], state)
    start = time.perf_counter()
    for it in range(config.iterations):
        scale = lr_scale(config, it)
        d_opt.lr, g_opt.lr = lr_d * scale, config.lr_g * scale
        for _ in range(config.d_steps):
            rb = sampler(train_rng, config.batch_size)
            fb = generate(gen, train_rng.standard_normal((config.batch_size, config.prior_dim)))
            try:
                loss, g_max = discriminator_step(
                    disc, d_opt, state, config.objective, rb, fb, train_rng
                )
            except FloatingPointError as exc:
                raise TrainingDiverged(f"iteration {it}: {exc}", result.records) from exc
            result.d_updates += 1
            if abs(loss) > config.divergence_threshold:
                raise TrainingDiverged(
                    f"iteration {it}: |d_loss| = {abs(loss):.3g} exceeds "
                    f"{config.divergence_threshold:.3g}",
                    result.records,
                )
        gl = None
        if not freeze_generator:
            z = Node(train_rng.standard_normal((config.batch_size, config.prior_dim)))
            if state.kind == "sn":
                nn.update_spectral_state(disc)
            gloss = g_loss(config.objective, nn.critic(disc)(nn.mlp_forward(gen, z)))
            gl = gloss.item()
            gparams = gen.parameters()
            grads = ad.backward(gloss, gparams)
            try:
                nn.adam_step(g_opt, gparams, grads)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"iteration {it}: {exc}", result.records) from exc
            result.g_updates += 1
        if it % config.eval_every == 0 or it == config.iterations - 1:
            fake_eval = generate(gen, eval_z)
            f = nn.critic(disc)
            rec = MetricsRecord(
                iteration=it,
                run=run,
                d_loss=loss,
                g_loss=gl,
                dual_objective=dual_objective(f, eval_real, fake_eval),
                lipschitz_estimate=lipschitz_estimate(
                    f, eval_real, fake_eval, config.lipschitz_samples, eval_rng
                ),
                lam=state.lam if state.kind == "maxal" else None,
                g_max=g_max,
                w1=exact_w1(eval_real, fake_eval)[0],
            )
            if config.record_wall_clock:
                rec.wall_ms = (time.perf_counter() - start) * 1e3
            result.records.append(rec)
    return result
