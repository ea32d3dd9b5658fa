"""Validated training configuration shared by the library and the runner."""

from __future__ import annotations

from enum import Enum
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator

from .regularizers import RegularizerState


class ObjectiveKind(str, Enum):
    WGAN = "wgan"
    HINGE = "hinge"
    VANILLA = "vanilla"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class RegularizerConfig(_Strict):
    kind: Literal["none", "clip", "sn", "gp", "lp", "maxgp", "maxal"] = "maxgp"
    rho: float = Field(10.0, ge=0)
    target: float = Field(1.0, gt=0)
    buffer_capacity: int = Field(0, ge=0)
    clip: float = Field(0.01, gt=0)

    def new_state(self) -> RegularizerState:
        return RegularizerState(
            kind=self.kind,
            rho=self.rho,
            target=self.target,
            buffer_capacity=self.buffer_capacity,
            clip=self.clip,
        )


class TrainConfig(_Strict):
    objective: ObjectiveKind = ObjectiveKind.WGAN
    regularizer: RegularizerConfig = Field(default_factory=RegularizerConfig)
    iterations: int = Field(2000, ge=1)
    d_steps: int = Field(5, ge=1)
    batch_size: int = Field(64, ge=1)
    # None resolves to 1e-3 for discriminator-only fitting and 1e-4 in GAN training
    lr_d: float | None = Field(None, gt=0)
    lr_g: float = Field(1e-4, gt=0)
    beta1: float = Field(0.0, ge=0, lt=1)
    beta2: float = Field(0.9, ge=0, lt=1)
    decay: Literal["none", "step"] = "step"
    # step decay halves the rates after each decay_every fraction of training
    decay_every: float = Field(0.25, gt=0, le=1)
    max_halvings: int = Field(3, ge=0)
    seed: int = 0
    prior_dim: int = Field(2, ge=1)
    d_hidden: list[int] = Field(default_factory=lambda: [64, 64])
    g_hidden: list[int] = Field(default_factory=lambda: [64, 64])
    activation: Literal["relu", "leaky_relu", "tanh"] = "leaky_relu"
    sn_iters: int = Field(1, ge=1)
    eval_every: int = Field(1, ge=1)
    lipschitz_samples: int = Field(256, ge=1)
    t_grid: int = Field(11, ge=2)
    divergence_threshold: float = Field(1e6, gt=0)
    record_wall_clock: bool = False

    @field_validator("d_hidden", "g_hidden")
    @classmethod
    def _positive_widths(cls, v: list[int]) -> list[int]:
        if any(w < 1 for w in v):
            raise ValueError("hidden widths must be >= 1")
        return v

    def d_learning_rate(self, gan: bool) -> float:
        if self.lr_d is not None:
            return self.lr_d
        return 1e-4 if gan else 1e-3
