"""Analytic reference densities and the point-array conventions used everywhere.

Every density accepts points as an ``(N, d)`` array and returns ``(N,)`` values.
In one dimension a flat ``(N,)`` array is read as ``N`` points; in higher
dimensions a flat ``(d,)`` array is a single point and gives a scalar back.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

LOG_2PI = np.log(2.0 * np.pi)


def as_points(x, d):
    """Return ``(points, scalar)`` where ``points`` has shape ``(N, d)``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        if d != 1:
            raise ValueError(f"scalar input for a {d}-dimensional density")
        return x.reshape(1, 1), True
    if x.ndim == 1:
        if d == 1:
            return x.reshape(-1, 1), False
        if x.shape[0] != d:
            raise ValueError(f"expected a point of length {d}, got {x.shape[0]}")
        return x.reshape(1, d), True
    if x.ndim == 2 and x.shape[1] == d:
        return x, False
    raise ValueError(f"expected points of shape (N, {d}), got {x.shape}")


def _finish(values, scalar):
    return float(values[0]) if scalar else values


def gaussian_logpdf(points, mean, chol):
    """Log density of N(mean, L L^T) at ``points`` (N, d)."""
    d = mean.shape[0]
    z = np.linalg.solve(chol, (points - mean).T)  # chol is lower triangular
    maha = np.sum(z * z, axis=0)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (maha + logdet + d * LOG_2PI)


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).copy()
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float)).copy()
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError("covariance shape does not match mean")
        cov = 0.5 * (cov + cov.T)
        chol = np.linalg.cholesky(cov)
        for arr in (mean, cov, chol):
            arr.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self):
        return self.mean.shape[0]

    def logpdf(self, x):
        pts, scalar = as_points(x, self.dim)
        return _finish(gaussian_logpdf(pts, self.mean, self._chol), scalar)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    __call__ = pdf

    def sample(self, n, rng):
        z = rng.standard_normal((n, self.dim))
        return self.mean + z @ self._chol.T

    def support_box(self, tail_mass=1e-8):
        k = -special.ndtri(tail_mass / (2.0 * self.dim))
        half = k * np.sqrt(np.diag(self.cov))
        return self.mean - half, self.mean + half


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float).copy()
        if np.any(weights <= 0) or not np.isclose(weights.sum(), 1.0):
            raise ValueError("mixture weights must be positive and sum to one")
        comps = tuple(self.components)
        if len(comps) != weights.shape[0]:
            raise ValueError("one weight per component")
        if len({c.dim for c in comps}) != 1:
            raise ValueError("components must share a dimension")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", comps)

    @classmethod
    def from_params(cls, weights, means, covs):
        return cls(weights, tuple(Gaussian(m, c) for m, c in zip(means, covs)))

    @property
    def dim(self):
        return self.components[0].dim

    def logpdf(self, x):
        pts, scalar = as_points(x, self.dim)
        logs = np.stack([c.logpdf(pts) for c in self.components])
        out = special.logsumexp(logs, axis=0, b=self.weights[:, None])
        return _finish(out, scalar)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    __call__ = pdf

    def sample(self, n, rng):
        labels = rng.choice(len(self.components), size=n, p=self.weights)
        out = np.empty((n, self.dim))
        for k, comp in enumerate(self.components):
            idx = np.flatnonzero(labels == k)
            out[idx] = comp.sample(idx.size, rng)
        return out

    def support_box(self, tail_mass=1e-8):
        boxes = [c.support_box(tail_mass / len(self.components)) for c in self.components]
        lo = np.min([b[0] for b in boxes], axis=0)
        hi = np.max([b[1] for b in boxes], axis=0)
        return lo, hi


@dataclass(frozen=True, eq=False)
class Uniform:
    """Uniform density on an axis-aligned box."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        low = np.atleast_1d(np.asarray(self.low, dtype=float)).copy()
        high = np.atleast_1d(np.asarray(self.high, dtype=float)).copy()
        if low.shape != high.shape or np.any(high <= low):
            raise ValueError("need low < high componentwise")
        object.__setattr__(self, "low", low)
        object.__setattr__(self, "high", high)

    @property
    def dim(self):
        return self.low.shape[0]

    def logpdf(self, x):
        pts, scalar = as_points(x, self.dim)
        inside = np.all((pts >= self.low) & (pts <= self.high), axis=1)
        logvol = np.sum(np.log(self.high - self.low))
        return _finish(np.where(inside, -logvol, -np.inf), scalar)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    __call__ = pdf

    def sample(self, n, rng):
        return self.low + (self.high - self.low) * rng.random((n, self.dim))

    def support_box(self, tail_mass=1e-8):
        return self.low.copy(), self.high.copy()

    def breakpoints(self):
        if self.dim != 1:
            return ()
        return (float(self.low[0]), float(self.high[0]))


@dataclass(frozen=True, eq=False)
class CallableDensity:
    """Adapter giving a bare ``f(points) -> values`` the density interface."""

    func: object
    dim: int = 1
    log_func: object = None
    box: tuple = None
    breaks: tuple = field(default=())

    def logpdf(self, x):
        pts, scalar = as_points(x, self.dim)
        if self.log_func is not None:
            out = np.asarray(self.log_func(pts), dtype=float)
        else:
            with np.errstate(divide="ignore"):
                out = np.log(np.asarray(self.func(pts), dtype=float))
        return _finish(out, scalar)

    def pdf(self, x):
        pts, scalar = as_points(x, self.dim)
        return _finish(np.asarray(self.func(pts), dtype=float), scalar)

    __call__ = pdf

    def support_box(self, tail_mass=1e-8):
        if self.box is None:
            raise ValueError("callable density has no declared support box")
        lo, hi = self.box
        return np.broadcast_to(np.asarray(lo, float), (self.dim,)).copy(), np.broadcast_to(
            np.asarray(hi, float), (self.dim,)
        ).copy()

    def breakpoints(self):
        return tuple(self.breaks)


def as_density(obj, dim=None):
    """Wrap plain callables; density objects pass through unchanged."""
    if hasattr(obj, "logpdf") and hasattr(obj, "dim"):
        return obj
    if callable(obj):
        return CallableDensity(obj, dim=1 if dim is None else dim)
    raise TypeError(f"not a density: {obj!r}")

