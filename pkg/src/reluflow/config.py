"""Validated run configurations for the command-line front end."""

from __future__ import annotations

from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, PositiveFloat, field_validator, model_validator

from .densities import Gaussian, GaussianMixture, Uniform


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _square(cov, d):
    a = np.asarray(cov, dtype=float)
    if a.shape != (d, d):
        raise ValueError(f"covariance must be {d}x{d}")
    if not np.allclose(a, a.T) or np.min(np.linalg.eigvalsh(a)) <= 0:
        raise ValueError("covariance must be symmetric positive definite")


class GaussianSpec(_Strict):
    kind: Literal["gaussian"] = "gaussian"
    mean: list[float] = Field(min_length=1)
    cov: list[list[float]]

    @model_validator(mode="after")
    def _shapes(self):
        _square(self.cov, len(self.mean))
        return self

    def build(self):
        return Gaussian(np.array(self.mean), np.array(self.cov))


class MixtureSpec(_Strict):
    kind: Literal["mixture"]
    weights: list[PositiveFloat] = Field(min_length=1)
    means: list[list[float]]
    covs: list[list[list[float]]]

    @model_validator(mode="after")
    def _shapes(self):
        k = len(self.weights)
        if len(self.means) != k or len(self.covs) != k:
            raise ValueError("weights, means and covs must have equal length")
        d = len(self.means[0])
        for m, c in zip(self.means, self.covs):
            if len(m) != d:
                raise ValueError("all means must share one dimension")
            _square(c, d)
        if abs(sum(self.weights) - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        return self

    def build(self):
        return GaussianMixture.from_params(self.weights, self.means, self.covs)


class UniformSpec(_Strict):
    kind: Literal["uniform"]
    low: list[float] = Field(min_length=1)
    high: list[float] = Field(min_length=1)

    @model_validator(mode="after")
    def _box(self):
        if len(self.low) != len(self.high) or any(lo >= hi for lo, hi in zip(self.low, self.high)):
            raise ValueError("need low < high componentwise")
        return self

    def build(self):
        return Uniform(np.array(self.low), np.array(self.high))


def _default_kind(value):
    if isinstance(value, dict) and "kind" not in value:
        return {**value, "kind": "gaussian"}
    return value


DensitySpec = Annotated[
    Union[GaussianSpec, MixtureSpec, UniformSpec], Field(discriminator="kind"), BeforeValidator(_default_kind)
]


class SynthesizeConfig(_Strict):
    base: GaussianSpec
    target: DensitySpec
    sigma_tail: PositiveFloat
    radius: PositiveFloat | None = None
    tail_mode: Literal["upper_bounded", "lower_bounded"] = "upper_bounded"
    objective: Literal["kl", "reverse_kl"] = "kl"
    epsilon: PositiveFloat
    horizon: PositiveFloat = 1.0
    seed: int = Field(ge=0)
    max_rounds: int = Field(default=5, ge=1)
    output_dir: str | None = None


DIVERGENCE_NAMES = ("kl", "tv", "hellinger_sq", "reverse_kl")


class DivergenceConfig(_Strict):
    p: DensitySpec
    q: DensitySpec
    divergences: list[str] = Field(default_factory=lambda: ["kl", "tv", "hellinger_sq"], min_length=1)
    method: Literal["quadrature", "monte_carlo"] | None = None
    seed: int | None = Field(default=None, ge=0)
    output_dir: str | None = None

    @field_validator("divergences")
    @classmethod
    def _names(cls, names):
        for n in names:
            if n in DIVERGENCE_NAMES:
                continue
            if n.startswith("renyi:"):
                try:
                    lam = float(n.split(":", 1)[1])
                except ValueError:
                    raise ValueError(f"bad Renyi order in {n!r}") from None
                if not lam > 0:
                    raise ValueError("Renyi order must be positive")
                continue
            raise ValueError(f"unknown divergence {n!r}")
        return names

    @model_validator(mode="after")
    def _seeded(self):
        if self.method == "monte_carlo" and self.seed is None:
            raise ValueError("method monte_carlo requires an explicit seed")
        return self


class PointsConfig(_Strict):
    source: str
    target: str
    horizon: PositiveFloat = 1.0
    mode: Literal["exact", "minimum_norm"] = "exact"
    activation: Literal["relu", "tanh", "softplus", "sigmoid"] = "relu"
    bias: bool = False
    n_grid: int = Field(default=256, ge=2)
    seed: int = Field(default=0, ge=0)
    output_dir: str | None = None

    @model_validator(mode="after")
    def _relu_exact(self):
        if self.mode == "exact" and self.activation != "relu":
            raise ValueError("exact matching is built for the relu activation")
        return self


class XlogxConfig(_Strict):
    p: PositiveFloat
    q: PositiveFloat
    t_values: list[float] = Field(min_length=1)
    x_max: float = Field(default=1e6, gt=1)
    n_grid: int = Field(default=200, ge=20)
    output_dir: str | None = None

    @model_validator(mode="after")
    def _order(self):
        if self.q > self.p:
            raise ValueError("need q <= p")
        return self


class FlowEvalConfig(_Strict):
    schedule: dict | str
    points: list[list[float]] = Field(min_length=1)
    t: float | None = None
    check_oracle: bool = True
    output_dir: str | None = None


CONFIGS = {
    "synthesize": SynthesizeConfig,
    "divergence": DivergenceConfig,
    "points": PointsConfig,
    "xlogx": XlogxConfig,
    "flow-eval": FlowEvalConfig,
}
