"""Superlinear transport ``d_t rho + d_x((|x| log x_+)_+ rho) = 0`` in closed form.

Trajectories with ``x >= 1`` follow ``x(t) = x^{e^t}``; everything else is
fixed. Starting from a stretched exponential ``exp(-|x|^p)`` the solution keeps
a stretched exponential tail with exponent ``p e^{-t}``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad

TREND_STEPS = 10
TREND_SLACK = math.log1p(1e-3)


@lru_cache(maxsize=None)
def _normalization(p: float) -> float:
    half, _ = quad(lambda x: math.exp(-(x**p)), 0.0, math.inf, epsabs=0.0, epsrel=1e-13, limit=200)
    return 2.0 * half


@dataclass(frozen=True)
class StretchedExponential:
    """Density ``exp(-|x|^p) / Z`` on the real line."""

    p: float

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError("exponent p must be positive")

    @property
    def normalization(self) -> float:
        return _normalization(float(self.p))

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        return -np.abs(x) ** self.p - math.log(self.normalization)

    def pdf(self, x):
        return np.exp(self.logpdf(x))


def xlogx_flow(x, t):
    """Position at time ``t`` of the trajectory started at ``x``."""
    x = np.asarray(x, dtype=float)
    safe = np.where(x >= 1.0, x, 1.0)
    out = np.where(x >= 1.0, safe ** math.exp(t), x)
    return float(out) if out.ndim == 0 else out


def xlogx_velocity(x):
    x = np.asarray(x, dtype=float)
    return np.where(x > 1.0, x * np.log(np.where(x > 1.0, x, 1.0)), 0.0)


def xlogx_logdensity(p, t, x):
    """``log rho(t, x)`` for the initial density :class:`StretchedExponential` ``(p)``."""
    base = StretchedExponential(p)
    x = np.asarray(x, dtype=float)
    safe = np.where(x >= 1.0, x, 1.0)
    shrink = math.exp(-t)
    moved = -t + base.logpdf(safe**shrink) + (shrink - 1.0) * np.log(safe)
    out = np.where(x >= 1.0, moved, base.logpdf(x))
    return float(out) if out.ndim == 0 else out


def xlogx_density(p, t, x):
    """``rho(t, x)``; below 1 the initial density is untouched."""
    return np.exp(xlogx_logdensity(p, t, x))


def xlogx_mass(p, t):
    """Total mass of ``rho(t, .)`` by adaptive quadrature."""
    lower, _ = quad(lambda x: float(xlogx_density(p, t, x)), -math.inf, 1.0, epsabs=1e-13, limit=200)
    # substitute x = u^{e^t} so the stretched tail becomes the initial one
    upper, _ = quad(lambda u: float(xlogx_density(p, t, u ** math.exp(t))) * math.exp(t) * u ** (math.exp(t) - 1.0),
                    1.0, math.inf, epsabs=1e-13, limit=200)
    return lower + upper


@dataclass(frozen=True)
class TailCheck:
    """Outcome of :func:`tail_conversion_check`.

    ``increments`` are the successive changes of the log-ratio over the last
    grid steps; the ratio is called finite when none exceeds ``log(1.001)``.
    """

    p: float
    q: float
    t: float
    threshold: float
    ratio_limit_finite: bool
    grid: np.ndarray
    log_ratio: np.ndarray
    increments: np.ndarray

    def to_dict(self):
        return {
            "p": self.p,
            "q": self.q,
            "t": self.t,
            "threshold": self.threshold,
            "ratio_limit_finite": self.ratio_limit_finite,
            "increments": self.increments.tolist(),
        }


def tail_conversion_check(p, q, t, x_max=1e6, n_grid=200, solution_over_reference=False):
    """Decide on a geometric grid whether the tail ratio stays bounded.

    By default the ratio is ``rho_{B,q}(x) / rho(t, x)``, which is bounded as
    ``x -> inf`` once the transported tail is at least as heavy as
    ``exp(-x^q)``, that is for ``t > log(p/q)``. ``solution_over_reference``
    flips the ratio.
    """
    if not (p > 0 and q > 0):
        raise ValueError("p and q must be positive")
    xs = np.geomspace(1.0, x_max, n_grid)
    log_ref = StretchedExponential(q).logpdf(xs)
    log_sol = xlogx_logdensity(p, t, xs)
    log_ratio = log_sol - log_ref if solution_over_reference else log_ref - log_sol
    inc = np.diff(log_ratio)[-TREND_STEPS:]
    finite = bool(np.all(inc <= TREND_SLACK))
    return TailCheck(float(p), float(q), float(t), math.log(p / q), finite, xs, log_ratio, inc)


def xlogx_table(p, q, t, xs):
    """Rows ``(x, rho(t, x), rho_{B,q}(x) / rho(t, x))``."""
    xs = np.asarray(xs, dtype=float)
    log_sol = xlogx_logdensity(p, t, xs)
    with np.errstate(over="ignore"):
        ratio = np.exp(StretchedExponential(q).logpdf(xs) - log_sol)
    return [(float(x), float(np.exp(ls)), float(r)) for x, ls, r in zip(xs, log_sol, ratio)]


def write_csv(rows, fh):
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["x", "density", "ratio"])
    for row in rows:
        writer.writerow([repr(v) for v in row])
