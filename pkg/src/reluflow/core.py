"""Domain types shared by the flow, synthesis and divergence modules.

Polyhedral regions use the split convention of the ReLU field: a half-space is
either the open side ``<n, x> + o > 0`` or the closed side ``<n, x> + o <= 0``,
so points on a switching hyperplane belong to the inactive side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, special

from . import quadrature
from .densities import LOG_2PI, as_density, as_points, gaussian_logpdf
from .errors import BudgetError, EvaluationError, SearchExhaustedError

TIME_TOL = 1e-12
TAIL_MODES = ("upper_bounded", "lower_bounded")


def _frozen_array(x, ndim=None):
    arr = np.array(x, dtype=float)
    if ndim is not None and arr.ndim < ndim:
        arr = arr.reshape((1,) * (ndim - arr.ndim) + arr.shape)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Control schedules


@dataclass(frozen=True, eq=False)
class ControlSegment:
    """Constant parameters ``(w, a, b)`` of the field ``w (a.x + b)_+`` on ``[t_start, t_end)``."""

    t_start: float
    t_end: float
    w: np.ndarray
    a: np.ndarray
    b: float

    def __post_init__(self):
        w = _frozen_array(np.atleast_1d(self.w))
        a = _frozen_array(np.atleast_1d(self.a))
        if w.ndim != 1 or w.shape != a.shape:
            raise ValueError("w and a must be vectors of equal length")
        if not (self.t_start < self.t_end):
            raise ValueError(f"segment needs t_start < t_end, got [{self.t_start}, {self.t_end}]")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(a)) and math.isfinite(self.b)):
            raise ValueError("segment parameters must be finite")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "t_end", float(self.t_end))

    @property
    def dim(self):
        return self.w.shape[0]

    @property
    def duration(self):
        return self.t_end - self.t_start

    @property
    def is_idle(self):
        return not np.any(self.w) or (not np.any(self.a) and self.b <= 0)

    def to_dict(self):
        return {
            "t0": self.t_start,
            "t1": self.t_end,
            "w": self.w.tolist(),
            "a": self.a.tolist(),
            "b": self.b,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["t0"], data["t1"], data["w"], data["a"], data["b"])


@dataclass(frozen=True, eq=False)
class ControlSchedule:
    """Piecewise-constant control on ``[0, horizon]``.

    An empty segment list is the zero control; ``dim`` must then be given.
    """

    segments: tuple
    horizon: float
    dim: int = None

    def __post_init__(self):
        segs = tuple(self.segments)
        horizon = float(self.horizon)
        if horizon < 0:
            raise ValueError("horizon must be nonnegative")
        dim = self.dim
        if segs:
            dims = {s.dim for s in segs}
            if len(dims) != 1:
                raise ValueError("all segments must share a dimension")
            dim = dims.pop() if dim is None else dim
            if dim != segs[0].dim:
                raise ValueError("declared dim does not match segments")
            tol = TIME_TOL * max(1.0, horizon)
            if abs(segs[0].t_start) > tol:
                raise ValueError("first segment must start at 0")
            if abs(segs[-1].t_end - horizon) > tol:
                raise ValueError("last segment must end at the horizon")
            for prev, nxt in zip(segs, segs[1:]):
                if abs(prev.t_end - nxt.t_start) > tol:
                    raise ValueError(
                        f"segments not contiguous at t={prev.t_end} / {nxt.t_start}"
                    )
        elif dim is None:
            raise ValueError("an empty schedule needs an explicit dim")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "dim", int(dim))

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    @property
    def switch_count(self):
        return max(len(self.segments) - 1, 0)

    @classmethod
    def from_parameters(cls, params, t0, t1, horizon=None, dim=None):
        """Spread ``[(w, a, b), ...]`` evenly over ``[t0, t1]``."""
        params = list(params)
        if not params:
            return cls((), t1 if horizon is None else horizon, dim=dim)
        times = np.linspace(t0, t1, len(params) + 1)
        segs = tuple(
            ControlSegment(times[k], times[k + 1], w, a, b) for k, (w, a, b) in enumerate(params)
        )
        if t0 > 0:
            segs = (ControlSegment(0.0, t0, np.zeros(segs[0].dim), np.zeros(segs[0].dim), 0.0),) + segs
        return cls(segs, t1 if horizon is None else horizon)

    def then(self, segments, horizon):
        """Append ``segments`` (absolute times); idle time before them is padded."""
        segments = tuple(segments)
        out = list(self.segments)
        end = out[-1].t_end if out else 0.0
        if segments and segments[0].t_start > end + TIME_TOL * max(1.0, horizon):
            z = np.zeros(self.dim)
            out.append(ControlSegment(end, segments[0].t_start, z, z, 0.0))
        out.extend(segments)
        return ControlSchedule(tuple(out), horizon, dim=self.dim)

    def to_dict(self):
        return {"horizon": self.horizon, "segments": [s.to_dict() for s in self.segments]}

    @classmethod
    def from_dict(cls, data, dim=None):
        segs = tuple(ControlSegment.from_dict(s) for s in data["segments"])
        return cls(segs, data["horizon"], dim=dim)


# ---------------------------------------------------------------------------
# Polyhedra


@dataclass(frozen=True, eq=False)
class HalfSpace:
    """``<normal, x> + offset > 0`` when ``strict`` else ``<normal, x> + offset <= 0``."""

    normal: np.ndarray
    offset: float
    strict: bool

    def __post_init__(self):
        object.__setattr__(self, "normal", _frozen_array(np.atleast_1d(self.normal)))
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "strict", bool(self.strict))

    def contains(self, points):
        s = points @ self.normal + self.offset
        return s > 0 if self.strict else s <= 0

    def preimage(self, M, s):
        """Half-space of ``y`` with ``M y + s`` in this half-space."""
        return HalfSpace(M.T @ self.normal, float(self.normal @ s) + self.offset, self.strict)


@dataclass(frozen=True, eq=False)
class Polyhedron:
    halfspaces: tuple
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "halfspaces", tuple(self.halfspaces))

    @classmethod
    def everything(cls, dim):
        return cls((), dim)

    @classmethod
    def box(cls, lo, hi):
        lo = np.atleast_1d(np.asarray(lo, float))
        hi = np.atleast_1d(np.asarray(hi, float))
        d = lo.shape[0]
        hs = []
        for k in range(d):
            e = np.zeros(d)
            e[k] = 1.0
            hs.append(HalfSpace(e, -hi[k], False))
            hs.append(HalfSpace(-e, lo[k], False))
        return cls(tuple(hs), d)

    def contains(self, points):
        inside = np.ones(points.shape[0], dtype=bool)
        for hs in self.halfspaces:
            inside &= hs.contains(points)
        return inside

    def intersect(self, *halfspaces):
        out = Polyhedron(self.halfspaces + tuple(halfspaces), self.dim)
        return out.simplified() if self.dim == 1 else out

    def intersect_polyhedron(self, other):
        return self.intersect(*other.halfspaces)

    def preimage(self, M, s):
        return Polyhedron(tuple(h.preimage(M, s) for h in self.halfspaces), self.dim)

    # -- one-dimensional fast path -------------------------------------------
    def interval(self):
        """``(lo, lo_closed, hi, hi_closed)`` for a 1D region, or ``None`` if empty."""
        lo, lo_closed, hi, hi_closed = -np.inf, False, np.inf, False
        for h in self.halfspaces:
            n = float(h.normal[0])
            if n == 0.0:
                ok = h.offset > 0 if h.strict else h.offset <= 0
                if not ok:
                    return None
                continue
            c = -h.offset / n
            if (n > 0) == h.strict:
                # lower bound: strict with n>0 gives x > c, closed with n<0 gives x >= c
                closed = not h.strict
                if c > lo or (c == lo and not closed):
                    lo, lo_closed = c, closed
            else:
                closed = not h.strict
                if c < hi or (c == hi and not closed):
                    hi, hi_closed = c, closed
        if lo > hi or (lo == hi and not (lo_closed and hi_closed)):
            return None
        return lo, lo_closed, hi, hi_closed

    def simplified(self):
        iv = self.interval()
        if iv is None:
            return Polyhedron((HalfSpace([0.0], 1.0, False),), 1)  # 1 <= 0: empty
        lo, lo_closed, hi, hi_closed = iv
        hs = []
        if np.isfinite(lo):
            hs.append(HalfSpace([-1.0], lo, False) if lo_closed else HalfSpace([1.0], -lo, True))
        if np.isfinite(hi):
            hs.append(HalfSpace([1.0], -hi, False) if hi_closed else HalfSpace([-1.0], hi, True))
        return Polyhedron(tuple(hs), 1)

    def is_empty(self):
        if not self.halfspaces:
            return False
        if self.dim == 1:
            return self.interval() is None
        return not _lp_nonempty(self.halfspaces, self.dim)


def _lp_nonempty(halfspaces, d, tol=1e-10):
    """Feasibility of mixed strict/closed half-spaces via a slack LP."""
    rows, rhs = [], []
    has_strict = False
    for h in halfspaces:
        norm = float(np.linalg.norm(h.normal))
        if norm == 0.0:
            if not (h.offset > 0 if h.strict else h.offset <= 0):
                return False
            continue
        n = h.normal / norm
        o = h.offset / norm
        if h.strict:
            # n.x + o >= s  ->  -n.x + s <= o
            rows.append(np.concatenate([-n, [1.0]]))
            rhs.append(o)
            has_strict = True
        else:
            rows.append(np.concatenate([n, [0.0]]))
            rhs.append(-o)
    if not rows:
        return True
    c = np.zeros(d + 1)
    c[-1] = -1.0
    bounds = [(None, None)] * d + [(None, 1.0)]
    res = optimize.linprog(c, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds, method="highs")
    if res.status == 2:
        return False
    if res.status != 0:
        return True  # unbounded/numerical trouble: keep the piece
    return (not has_strict) or (-res.fun > tol)


# ---------------------------------------------------------------------------
# Piecewise Gaussian densities


@dataclass(frozen=True, eq=False)
class GaussianPiece:
    """``amplitude * rho_B(A x + shift)`` restricted to ``region``."""

    amplitude: float
    A: np.ndarray
    shift: np.ndarray
    region: Polyhedron

    def __post_init__(self):
        A = _frozen_array(np.atleast_2d(self.A))
        shift = _frozen_array(np.atleast_1d(self.shift))
        if not self.amplitude > 0:
            raise ValueError("piece amplitude must be positive")
        if A.shape != (shift.shape[0], shift.shape[0]):
            raise ValueError("A must be square and match the shift")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "amplitude", float(self.amplitude))

    def gaussian_params(self, base_mean, base_cov):
        """Weight, mean and covariance with ``piece = weight * N(mean, cov)`` off-region."""
        Ainv = np.linalg.inv(self.A)
        mean = Ainv @ (base_mean - self.shift)
        cov = Ainv @ base_cov @ Ainv.T
        weight = self.amplitude / abs(np.linalg.det(self.A))
        return weight, mean, 0.5 * (cov + cov.T)


@dataclass(frozen=True, eq=False)
class PiecewiseGaussianDensity:
    """Finite sum of Gaussian pieces over a polyhedral partition of R^d."""

    base_mean: np.ndarray
    base_cov: np.ndarray
    pieces: tuple

    def __post_init__(self):
        mean = _frozen_array(np.atleast_1d(self.base_mean))
        cov = np.atleast_2d(np.asarray(self.base_cov, dtype=float))
        cov = _frozen_array(0.5 * (cov + cov.T))
        chol = np.linalg.cholesky(cov)
        object.__setattr__(self, "base_mean", mean)
        object.__setattr__(self, "base_cov", cov)
        object.__setattr__(self, "pieces", tuple(self.pieces))
        object.__setattr__(self, "_chol", chol)

    @classmethod
    def gaussian(cls, mean, cov, amplitude=1.0):
        mean = np.atleast_1d(np.asarray(mean, float))
        d = mean.shape[0]
        piece = GaussianPiece(amplitude, np.eye(d), np.zeros(d), Polyhedron.everything(d))
        return cls(mean, cov, (piece,))

    @property
    def dim(self):
        return self.base_mean.shape[0]

    def __len__(self):
        return len(self.pieces)

    def logpdf(self, x):
        pts, scalar = as_points(x, self.dim)
        out = np.full(pts.shape[0], -np.inf)
        for piece in self.pieces:
            mask = piece.region.contains(pts)
            if not mask.any():
                continue
            z = pts[mask] @ piece.A.T + piece.shift
            out[mask] = np.log(piece.amplitude) + gaussian_logpdf(z, self.base_mean, self._chol)
        return float(out[0]) if scalar else out

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    __call__ = pdf

    def membership_counts(self, x):
        pts, _ = as_points(x, self.dim)
        counts = np.zeros(pts.shape[0], dtype=int)
        for piece in self.pieces:
            counts += piece.region.contains(pts)
        return counts

    def covariances(self):
        return [p.gaussian_params(self.base_mean, self.base_cov)[2] for p in self.pieces]

    def breakpoints(self):
        if self.dim != 1:
            return ()
        pts = set()
        for p in self.pieces:
            iv = p.region.interval()
            if iv is None:
                continue
            for v in (iv[0], iv[2]):
                if np.isfinite(v):
                    pts.add(float(v))
        return tuple(sorted(pts))

    def axis_breakpoints(self):
        """Per-axis offsets of axis-aligned region faces (quadrature panel edges)."""
        out = [set() for _ in range(self.dim)]
        for p in self.pieces:
            for h in p.region.halfspaces:
                nz = np.flatnonzero(h.normal)
                if nz.size == 1:
                    k = nz[0]
                    out[k].add(-h.offset / h.normal[k])
        return [tuple(sorted(s)) for s in out]

    # -- mass ----------------------------------------------------------------
    def piece_masses(self, box=None, seed=quadrature.MC_DEFAULT_SEED):
        """Mass of each piece (optionally clipped to ``box=(lo, hi)``)."""
        masses = []
        clip = Polyhedron.box(*box) if box is not None else None
        for k, piece in enumerate(self.pieces):
            region = piece.region if clip is None else piece.region.intersect_polyhedron(clip)
            weight, mean, cov = piece.gaussian_params(self.base_mean, self.base_cov)
            if self.dim == 1:
                prob = _interval_prob(region, mean[0], math.sqrt(cov[0, 0]))
            elif self.dim == 2:
                prob = _polygon_prob(region, mean, cov)
            else:
                prob = _mc_prob(region, mean, cov, seed + k)
            masses.append(weight * prob)
        return np.array(masses)

    def mass(self, box=None, seed=quadrature.MC_DEFAULT_SEED):
        return float(np.sum(self.piece_masses(box, seed)))

    def cdf(self, x):
        """Exact distribution function in 1D."""
        if self.dim != 1:
            raise ValueError("cdf is only defined in one dimension")
        x = np.atleast_1d(np.asarray(x, float))
        out = np.zeros_like(x)
        for piece in self.pieces:
            iv = piece.region.interval()
            if iv is None:
                continue
            weight, mean, cov = piece.gaussian_params(self.base_mean, self.base_cov)
            sd = math.sqrt(cov[0, 0])
            lo = special.ndtr((iv[0] - mean[0]) / sd)
            upper = np.minimum(x, iv[2])
            out += np.where(x > iv[0], weight * (special.ndtr((upper - mean[0]) / sd) - lo), 0.0)
        return out

    def support_box(self, tail_mass=1e-8):
        if self.dim == 1:
            total = self.mass()
            params = [p.gaussian_params(self.base_mean, self.base_cov) for p in self.pieces]
            centers = [m[0] for _, m, _ in params]
            spread = max(math.sqrt(c[0, 0]) for _, _, c in params)
            a, b = min(centers) - 60 * spread, max(centers) + 60 * spread
            target = 0.5 * tail_mass * total
            lo = optimize.brentq(lambda x: self.cdf(x)[0] - target, a, b, xtol=1e-12)
            hi = optimize.brentq(lambda x: self.cdf(x)[0] - (total - target), a, b, xtol=1e-12)
            return np.array([lo]), np.array([hi])
        los, his = [], []
        n = len(self.pieces)
        for piece in self.pieces:
            weight, mean, cov = piece.gaussian_params(self.base_mean, self.base_cov)
            share = tail_mass / (2.0 * self.dim * n * max(1.0, weight))
            k = -special.ndtri(share)
            half = k * np.sqrt(np.diag(cov))
            los.append(mean - half)
            his.append(mean + half)
        return np.min(los, axis=0), np.max(his, axis=0)

    def with_pieces(self, pieces):
        return PiecewiseGaussianDensity(self.base_mean, self.base_cov, tuple(pieces))


def _interval_prob(region, mean, sd):
    iv = region.interval()
    if iv is None:
        return 0.0
    lo, _, hi, _ = iv
    a, b = (lo - mean) / sd, (hi - mean) / sd
    if a > 0:  # upper tail: use survival functions for precision
        return float(special.ndtr(-a) - special.ndtr(-b))
    return float(special.ndtr(b) - special.ndtr(a))


def _polygon_prob(region, mean, cov):
    """P(Z in region) for Z ~ N(mean, cov) in 2D.

    Slices along x1: the x2-section of a convex polygon is an interval whose
    conditional Gaussian probability is closed form, so the outer integrand is
    smooth between the x1-coordinates of pairwise line intersections.
    """
    s1 = math.sqrt(cov[0, 0])
    beta = cov[1, 0] / cov[0, 0]
    s21 = math.sqrt(max(cov[1, 1] - beta * cov[1, 0], 1e-300))
    x1_lo, x1_hi = mean[0] - 40 * s1, mean[0] + 40 * s1
    lower, upper = [], []  # x2 bounds as (slope, intercept) in x1
    lines = []
    for h in region.halfspaces:
        n1, n2 = float(h.normal[0]), float(h.normal[1])
        scale = max(abs(n1), abs(n2))
        if scale == 0.0:
            if not (h.offset > 0 if h.strict else h.offset <= 0):
                return 0.0
            continue
        if abs(n2) <= 1e-14 * scale:
            c = -h.offset / n1
            if (n1 > 0) == h.strict:
                x1_lo = max(x1_lo, c)
            else:
                x1_hi = min(x1_hi, c)
            lines.append((None, c))
            continue
        line = (-n1 / n2, -h.offset / n2)
        lines.append(line)
        if (n2 > 0) == h.strict:
            lower.append(line)
        else:
            upper.append(line)
    if x1_lo >= x1_hi:
        return 0.0
    breaks = {x1_lo, x1_hi}
    for i, li in enumerate(lines):
        for lj in lines[i + 1:]:
            if li[0] is None and lj[0] is None:
                continue
            if li[0] is None or lj[0] is None:
                x = li[1] if li[0] is None else lj[1]
            elif li[0] == lj[0]:
                continue
            else:
                x = (lj[1] - li[1]) / (li[0] - lj[0])
            if x1_lo < x < x1_hi:
                breaks.add(x)
    slopes = [abs(l[0] - beta) for l in lower + upper] or [0.0]
    width = 0.5 * min(s1, s21 / max(max(slopes), 1e-12))
    edges = []
    bk = sorted(breaks)
    for a, b in zip(bk, bk[1:]):
        n = min(max(1, int(math.ceil((b - a) / width))), 4000)
        edges.append(np.linspace(a, b, n + 1)[:-1])
    edges.append([bk[-1]])
    x1, w = quadrature.gl_rule(np.concatenate(edges))
    m2 = mean[1] + beta * (x1 - mean[0])
    lo = np.full_like(x1, -np.inf)
    hi = np.full_like(x1, np.inf)
    for slope, icpt in lower:
        lo = np.maximum(lo, slope * x1 + icpt)
    for slope, icpt in upper:
        hi = np.minimum(hi, slope * x1 + icpt)
    inner = np.where(hi > lo, special.ndtr((hi - m2) / s21) - special.ndtr((lo - m2) / s21), 0.0)
    outer = np.exp(-0.5 * ((x1 - mean[0]) / s1) ** 2) / (s1 * math.sqrt(2 * math.pi))
    return float(np.dot(w, outer * np.clip(inner, 0.0, None)))


def _mc_prob(region, mean, cov, seed, n=2**16):
    rng = quadrature.rng_from_seed(seed)
    z = rng.standard_normal((n, mean.shape[0])) @ np.linalg.cholesky(cov).T + mean
    return float(region.contains(z).mean())


# ---------------------------------------------------------------------------
# Targets


@dataclass(frozen=True, eq=False)
class TargetSpec:
    """Target density with its Gaussian tail hypothesis.

    ``upper_bounded``: target <= N(0, sigma_tail^2 I) density outside radius ``radius``.
    ``lower_bounded``: target >= that envelope outside ``radius``.
    """

    density: object
    sigma_tail: float
    radius: float
    tail_mode: str = "upper_bounded"
    dim: int = 1

    def __post_init__(self):
        if not self.sigma_tail > 0 or not self.radius > 0:
            raise ValueError("sigma_tail and radius must be positive")
        if self.tail_mode not in TAIL_MODES:
            raise ValueError(f"tail_mode must be one of {TAIL_MODES}")
        dens = as_density(self.density, self.dim)
        object.__setattr__(self, "density", dens)
        object.__setattr__(self, "dim", int(getattr(dens, "dim", self.dim)))

    def pdf(self, x):
        return self.density.pdf(x)

    __call__ = pdf

    def logpdf(self, x):
        return self.density.logpdf(x)

    def envelope_logpdf(self, x):
        pts, scalar = as_points(x, self.dim)
        s2 = self.sigma_tail**2
        out = -0.5 * self.dim * (LOG_2PI + math.log(s2)) - 0.5 * np.sum(pts * pts, axis=1) / s2
        return float(out[0]) if scalar else out

    def support_box(self, tail_mass=1e-8):
        if hasattr(self.density, "support_box"):
            try:
                return self.density.support_box(tail_mass)
            except ValueError:
                pass
        k = -special.ndtri(tail_mass / (2 * self.dim))
        r = max(self.radius, k * self.sigma_tail)
        return -np.full(self.dim, r), np.full(self.dim, r)


# ---------------------------------------------------------------------------
# Grid interpolants and switch budgets


def n_cells(R, h):
    """Cells per axis, ``ceil(2R/h)`` with a guard against rounding noise."""
    ratio = 2.0 * R / h
    if not math.isfinite(ratio):
        raise BudgetError(f"cell count 2R/h={ratio} is not finite")
    return max(1, int(math.ceil(ratio * (1.0 - 1e-12))))


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Piecewise-constant interpolant on ``[-R, R]^d``.

    Cells per axis is ``ceil(2R/h)``; the realized spacing is ``2R / ceil(2R/h) <= h``.
    """

    R: float
    h: float
    values: np.ndarray

    def __post_init__(self):
        if not (self.R > 0 and self.h > 0):
            raise ValueError("R and h must be positive")
        values = _frozen_array(self.values)
        n = n_cells(self.R, self.h)
        if values.ndim < 1 or any(s != n for s in values.shape):
            raise ValueError(f"values must have shape ({n},)*d, got {values.shape}")
        if np.any(values < 0):
            raise ValueError("grid values must be nonnegative")
        object.__setattr__(self, "values", values)

    @property
    def dim(self):
        return self.values.ndim

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def spacing(self):
        return 2.0 * self.R / self.n

    @property
    def edges(self):
        return np.linspace(-self.R, self.R, self.n + 1)

    @property
    def centers(self):
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    def __call__(self, x):
        pts, scalar = as_points(x, self.dim)
        idx = np.floor((pts + self.R) / self.spacing).astype(int)
        inside = np.all((pts >= -self.R) & (pts <= self.R), axis=1)
        idx = np.clip(idx, 0, self.n - 1)
        out = np.where(inside, self.values[tuple(idx.T)], 0.0)
        return float(out[0]) if scalar else out

    def l1_distance(self, rho, seed=quadrature.MC_DEFAULT_SEED):
        """``int_{[-R,R]^d} |grid - rho|``; each cell is split at its center."""
        d = self.dim
        e = self.edges
        fine = np.sort(np.concatenate([e, self.centers]))
        if d == 1:
            x, w = quadrature.gl_rule(fine)
            pts = x[:, None]
            return float(np.dot(w, np.abs(self(pts) - _eval(rho, pts))))
        if d == 2:
            x, w = quadrature.gl_rule(fine, order=8)
            g = np.meshgrid(x, x, indexing="ij")
            pts = np.stack([g[0].ravel(), g[1].ravel()], axis=1)
            ww = np.outer(w, w).ravel()
            return float(np.dot(ww, np.abs(self(pts) - _eval(rho, pts))))
        return quadrature.integrate_box_mc(
            lambda p: np.abs(self(p) - _eval(rho, p)), -self.R * np.ones(d), self.R * np.ones(d), seed=seed
        )[0]

    def to_dict(self):
        return {
            "R": self.R,
            "h": self.h,
            "shape": list(self.values.shape),
            "values": self.values.ravel(order="C").tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["R"], data["h"], np.asarray(data["values"], float).reshape(data["shape"]))


def _eval(rho, pts):
    f = rho.pdf if hasattr(rho, "pdf") else rho
    return np.asarray(f(pts), dtype=float)


def build_grid_interpolant(rho, R, h, d=1):
    """Midpoint interpolant of ``rho`` on the regular grid of ``[-R, R]^d``."""
    if not (R > 0 and h > 0 and h <= 2 * R):
        raise ValueError("need R > 0 and 0 < h <= 2R")
    n = n_cells(R, h)
    edges = np.linspace(-R, R, n + 1)
    c = 0.5 * (edges[:-1] + edges[1:])
    grids = np.meshgrid(*([c] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    vals = _eval(rho, pts)
    bad = ~np.isfinite(vals)
    if bad.any():
        p = pts[np.argmax(bad)]
        raise EvaluationError(f"density is not finite at {p.tolist()}", point=p)
    return GridDensity(R, h, vals.reshape((n,) * d))


def switch_budget(R, h, d):
    """``ceil(2R/h)^d (d + 10) + 2d`` as an exact integer."""
    if not (R > 0 and h > 0) or d < 1:
        raise ValueError("need R, h > 0 and d >= 1")
    n = n_cells(R, h)
    budget = n**d * (d + 10) + 2 * d
    if budget > 2**63 - 1:
        raise BudgetError("switch budget is unbounded for practical purposes", budget=budget)
    return budget


def box_mass(rho, R, d, seed=quadrature.MC_DEFAULT_SEED):
    """Mass of ``rho`` on ``[-R, R]^d``."""
    lo, hi = -R * np.ones(d), R * np.ones(d)
    if hasattr(rho, "mass") and hasattr(rho, "pieces"):
        return rho.mass((lo, hi))
    if d == 1:
        panels = min(4096, max(64, int(math.ceil(2 * R / 0.05))))
    else:
        panels = min(256, max(32, int(math.ceil(2 * R / 0.25))))
    return quadrature.integrate(lambda p: _eval(rho, p), lo, hi, d=d, n_panels=panels, seed=seed)


def select_truncation(rho_base, rho_target, eps, d=1, max_iter=40):
    """Smallest ``(R, h)`` on the doubling/halving ladder meeting both mass and L1 conditions.

    ``R`` doubles from 1 until both densities put mass ``> 1 - eps`` on the cube;
    ``h`` halves from ``R`` until both midpoint interpolants are ``eps``-close in L1.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    R = 1.0
    for _ in range(max_iter):
        if box_mass(rho_base, R, d) > 1 - eps and box_mass(rho_target, R, d) > 1 - eps:
            break
        R *= 2.0
    else:
        raise SearchExhaustedError("no radius met the mass condition", best=(R / 2.0, R))
    h = R
    for _ in range(max_iter):
        gaps = [build_grid_interpolant(r, R, h, d).l1_distance(r) for r in (rho_base, rho_target)]
        if max(gaps) < eps:
            return R, h
        h /= 2.0
    raise SearchExhaustedError("no spacing met the interpolation condition", best=(R, 2.0 * h))
