"""Exact point-cloud matching and minimum-norm controls for ``dx/dt = w(t) sigma(x) + b(t)``.

Here ``w`` is a ``d x d`` matrix and ``b`` a vector. Point clouds are ``(n, d)``
arrays with one point per row.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from . import quadrature
from .errors import DistinctnessError, RankError, SeparationError, UnsupportedDimensionError

DISTINCT_TOL = 1e-12
GAP_MARGIN = 1e-6
RANK_TOL = 1e-10


def _softplus(x):
    return np.logaddexp(0.0, x)


ACTIVATIONS: dict[str, Callable] = {
    "relu": lambda x: np.maximum(x, 0.0),
    "tanh": np.tanh,
    "softplus": _softplus,
    "sigmoid": lambda x: 0.5 * (1.0 + np.tanh(0.5 * x)),
}


def activation(sigma):
    if callable(sigma):
        return sigma
    try:
        return ACTIVATIONS[sigma]
    except KeyError:
        raise ValueError(f"unknown activation {sigma!r}; choose from {sorted(ACTIVATIONS)}") from None


# ---------------------------------------------------------------------------
# schedules of the linear-in-parameter model


@dataclass(frozen=True, eq=False)
class LinearSegment:
    t_start: float
    t_end: float
    w: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        w = np.atleast_2d(np.array(self.w, dtype=float))
        b = np.atleast_1d(np.array(self.b, dtype=float))
        if not self.t_start < self.t_end:
            raise ValueError("segment needs t_start < t_end")
        if w.shape != (b.shape[0], b.shape[0]):
            raise ValueError("w must be d x d with d = len(b)")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "t_start", float(self.t_start))
        object.__setattr__(self, "t_end", float(self.t_end))

    @property
    def duration(self):
        return self.t_end - self.t_start

    def to_dict(self):
        return {"t0": self.t_start, "t1": self.t_end, "w": self.w.tolist(), "b": self.b.tolist()}

    @classmethod
    def from_dict(cls, data):
        return cls(data["t0"], data["t1"], data["w"], data["b"])


@dataclass(frozen=True, eq=False)
class MatchingPlan:
    """Piecewise-constant ``(w, b)`` steering each ``X[i]`` onto ``Y[i]``.

    ``order_second`` and ``order_first`` are the relabelings (by second, then
    first coordinate) used by the inductive stages; ``constants`` holds the
    chosen magnitudes and ``witnesses`` the ordering checks made on the way.
    """

    segments: tuple
    horizon: float
    order_second: tuple = ()
    order_first: tuple = ()
    constants: dict = field(default_factory=dict)
    witnesses: tuple = ()

    @property
    def switch_count(self):
        return max(len(self.segments) - 1, 0)

    @property
    def dim(self):
        return self.segments[0].b.shape[0]

    def to_dict(self):
        return {
            "horizon": self.horizon,
            "segments": [s.to_dict() for s in self.segments],
            "relabeling": {"second": list(self.order_second), "first": list(self.order_first)},
            "constants": self.constants,
            "witnesses": list(self.witnesses),
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    @classmethod
    def from_dict(cls, data):
        rel = data.get("relabeling", {})
        return cls(
            tuple(LinearSegment.from_dict(s) for s in data["segments"]),
            data["horizon"],
            tuple(rel.get("second", ())),
            tuple(rel.get("first", ())),
            dict(data.get("constants", {})),
            tuple(data.get("witnesses", ())),
        )


# ---------------------------------------------------------------------------
# exact ReLU flows for the structured segments


def _relu_affine_scalar(s, a, q, tau):
    """Solve ``ds/dt = a s_+ + q`` for time ``tau``, elementwise over arrays ``s`` and ``q``."""
    s = np.array(s, dtype=float)
    q = np.broadcast_to(np.asarray(q, float), s.shape).copy()
    out = np.empty_like(s)
    for idx in np.ndindex(s.shape):
        out[idx] = _relu_affine_one(float(s[idx]), a, float(q[idx]), tau)
    return out


def _grow(s, a, q, t):
    if a == 0.0:
        return s + q * t
    return (s + q / a) * math.exp(a * t) - q / a


def _relu_affine_one(s, a, q, tau):
    left = tau
    for _ in range(3):
        if s > 0 or (s == 0 and q > 0):
            hit = math.inf
            if q < 0 and s > 0:
                if a == 0.0:
                    hit = s / -q
                else:
                    ratio = (q / a) / (s + q / a)
                    if ratio > 0:
                        t_hit = math.log(ratio) / a
                        if t_hit > 0:
                            hit = t_hit
            if hit >= left:
                return _grow(s, a, q, left)
            s, left = 0.0, left - hit
            return s + q * left
        if q > 0 and s + q * left > 0:
            hit = -s / q
            s, left = 0.0, left - hit
            continue
        return s + q * left
    return s


def _segment_flow(pts, seg, sigma):
    """Advance ``(n, d)`` points across one linear segment, exactly when the structure allows."""
    w, b, tau = seg.w, seg.b, seg.duration
    if not np.any(w):
        return pts + tau * b
    relu = sigma is ACTIVATIONS["relu"]
    rows = np.flatnonzero(np.any(w != 0, axis=1))
    cols = np.flatnonzero(np.any(w != 0, axis=0))
    b_rows = np.flatnonzero(b)
    if relu and rows.size == 1 and set(b_rows) <= set(rows):
        r = rows[0]
        others = np.delete(np.arange(w.shape[1]), r)
        q = np.maximum(pts[:, others], 0.0) @ w[r, others] + b[r]
        out = pts.copy()
        out[:, r] = _relu_affine_scalar(pts[:, r], float(w[r, r]), q, tau)
        return out
    if relu and cols.size == 1 and b_rows.size == 0:
        c = cols[0]
        a = float(w[c, c])
        xc = np.maximum(pts[:, c], 0.0)
        integral = xc * (tau if a == 0.0 else math.expm1(a * tau) / a)
        out = pts + integral[:, None] * w[:, c][None, :]
        out[:, c] = np.where(pts[:, c] > 0, pts[:, c] * math.exp(a * tau), pts[:, c])
        return out
    return _integrate_segment(pts, seg, sigma)


def _integrate_segment(pts, seg, sigma, rtol=1e-12, atol=1e-12):
    n, d = pts.shape

    def rhs(_, z):
        x = z.reshape(n, d)
        return (sigma(x) @ seg.w.T + seg.b).ravel()

    sol = solve_ivp(rhs, (0.0, seg.duration), pts.ravel(), method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(sol.message)
    return sol.y[:, -1].reshape(n, d)


def flow_linear(segments, X, t=None, sigma="relu"):
    """Positions at time ``t`` of trajectories started at the rows of ``X``."""
    sig = activation(sigma)
    pts = np.array(X, dtype=float, ndmin=2)
    segments = segments.segments if isinstance(segments, MatchingPlan) else tuple(segments)
    t = segments[-1].t_end if t is None else float(t)
    for seg in segments:
        if seg.t_start >= t:
            break
        if seg.t_end > t:
            seg = LinearSegment(seg.t_start, t, seg.w, seg.b)
        pts = _segment_flow(pts, seg, sig)
    return pts


# ---------------------------------------------------------------------------
# exact matching


def _check_distinct(P, name):
    n = P.shape[0]
    if n < 2:
        return
    diff = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)
    scale = max(1.0, float(np.max(np.abs(P))))
    np.fill_diagonal(diff, np.inf)
    if np.min(diff) <= DISTINCT_TOL * scale:
        i, j = np.unravel_index(np.argmin(diff), diff.shape)
        raise DistinctnessError(f"{name} points {min(i, j)} and {max(i, j)} coincide")


def pick_separating_vector(points, seed=0, max_draws=1000):
    """Unit vector with positive entries not orthogonal to any pairwise difference."""
    P = np.array(points, dtype=float, ndmin=2)
    n, d = P.shape
    diffs = (P[:, None, :] - P[None, :, :])[np.triu_indices(n, 1)]
    norms = np.linalg.norm(diffs, axis=1)
    rng = quadrature.rng_from_seed(seed)
    for _ in range(max_draws):
        v = rng.uniform(0.05, 1.0, d)
        v /= np.linalg.norm(v)
        if diffs.size == 0 or np.all(np.abs(diffs @ v) > 1e-10 * norms):
            return v
    raise SeparationError(f"no separating vector found in {max_draws} draws")


def _rank_one_push(P, row, u, K):
    """``P -> P + K <u, P> e_row`` (the linear flow of a one-row coupling on the positive orthant)."""
    out = P.copy()
    out[:, row] += K * (P @ u)
    return out


def _separate(P, row, u, tau, sign=1.0, max_halvings=60):
    """Largest ``alpha`` in ``1, 1/2, ...`` making coordinate ``row`` pairwise distinct."""
    alpha = 1.0
    for _ in range(max_halvings):
        c = sign * alpha * u[row]
        K = tau * sign * alpha if c == 0 else math.expm1(c * tau) / u[row]
        Q = _rank_one_push(P, row, u, K)
        gaps = np.diff(np.sort(Q[:, row]))
        if gaps.size == 0 or gaps.min() > GAP_MARGIN:
            return alpha, Q
        alpha /= 2.0
    raise SeparationError(f"coordinate {row} could not be separated")


def exact_match(X, Y, T=1.0, seed=0):
    """Schedule of ``4n + 3`` segments (``4n + 2`` switches) moving each ``X[i]`` exactly to ``Y[i]``.

    Stages: push every point into the positive orthant, separate second
    coordinates, match first coordinates one point at a time (ordered by the
    second coordinate), then the remaining coordinates (ordered by the first),
    undo the common offset, and finish with the time-reversed preprocessing
    of ``Y`` that made its first coordinates distinct.
    """
    X = np.array(X, dtype=float, ndmin=2)
    Y = np.array(Y, dtype=float, ndmin=2)
    if X.shape != Y.shape:
        raise ValueError("X and Y must have the same shape")
    n, d = X.shape
    if T <= 0:
        raise ValueError("T must be positive")
    _check_distinct(X, "source")
    _check_distinct(Y, "target")
    if n == 1:
        seg = LinearSegment(0.0, T, np.zeros((d, d)), (Y[0] - X[0]) / T)
        return MatchingPlan((seg,), T, (0,), (0,), {"n": 1})
    if d < 2:
        raise UnsupportedDimensionError("matching two or more points needs d >= 2")

    K = 4 * n + 3
    tau = T / K
    times = np.linspace(0.0, T, K + 1)
    durations = np.diff(times)
    relu = ACTIVATIONS["relu"]
    Z = np.zeros((d, d))
    segs = []
    wit = []

    def step(P, w, b):
        # positions are tracked with the same flow used for evaluation
        k = len(segs)
        seg = LinearSegment(times[k], times[k + 1], w, b)
        segs.append(seg)
        return _segment_flow(P, seg, relu)

    # positivity push and separation of the second coordinate
    beta1 = 2.0 * (1.0 + float(np.max(np.abs(X)))) / tau
    P = step(X, Z, np.full(d, beta1))
    v = pick_separating_vector(P, seed)
    alpha1, _ = _separate(P, 1, v, durations[1])
    w2 = np.zeros((d, d))
    w2[1] = alpha1 * v
    P = step(P, w2, np.zeros(d))

    # preprocessing of Y, undone by the last two segments; run them backward from Y
    beta2 = 2.0 * (1.0 + float(np.max(np.abs(Y)))) / tau
    u = pick_separating_vector(Y + tau * beta2, seed + 1)
    alpha2, _ = _separate(Y + tau * beta2, 0, u, durations[-2])
    w_last = np.zeros((d, d))
    w_last[0] = -alpha2 * u
    tail = (
        LinearSegment(times[K - 2], times[K - 1], w_last, np.zeros(d)),
        LinearSegment(times[K - 1], times[K], Z, np.full(d, -beta2)),
    )
    Ybar = Y
    for seg in reversed(tail):
        Ybar = _segment_flow(Ybar, LinearSegment(seg.t_start, seg.t_end, -seg.w, -seg.b), relu)

    # first coordinate, ordered by the second
    order2 = tuple(int(i) for i in np.argsort(P[:, 1], kind="stable"))
    c = np.zeros(d)
    c[0] = P[order2[0], 0] - Ybar[order2[0], 0]
    P = step(P, Z, np.zeros(d))
    for pos in range(1, n):
        i_prev, i = order2[pos - 1], order2[pos]
        dt = durations[len(segs)]
        P = step(P, Z, -0.5 * (P[i_prev, 1] + P[i, 1]) / dt * np.eye(d)[1])
        xs = P[list(order2), 1]
        wit.append({"stage": "second", "step": pos, "ok": bool(np.all(xs[:pos] < 0) and np.all(xs[pos:] > 0)
                                                                 and np.all(np.diff(xs) > 0))})
        dt = durations[len(segs)]
        w = np.zeros((d, d))
        w[0, 1] = (Ybar[i, 0] + c[0] - P[i, 0]) / (dt * P[i, 1])
        P = step(P, w, np.zeros(d))

    # remaining coordinates, ordered by the first
    order1 = tuple(int(i) for i in np.argsort(P[:, 0], kind="stable"))
    c[1:] = P[order1[0], 1:] - Ybar[order1[0], 1:]
    P = step(P, Z, np.zeros(d))
    for pos in range(1, n):
        i_prev, i = order1[pos - 1], order1[pos]
        dt = durations[len(segs)]
        before = P[i, 0]
        P = step(P, Z, -0.5 * (P[i_prev, 0] + P[i, 0]) / dt * np.eye(d)[0])
        c[0] += P[i, 0] - before
        xs = P[list(order1), 0]
        wit.append({"stage": "first", "step": pos, "ok": bool(np.all(xs[:pos] < 0) and np.all(xs[pos:] > 0)
                                                                and np.all(np.diff(xs) > 0))})
        dt = durations[len(segs)]
        w = np.zeros((d, d))
        w[1:, 0] = (Ybar[i, 1:] + c[1:] - P[i, 1:]) / (dt * P[i, 0])
        P = step(P, w, np.zeros(d))

    dt = durations[len(segs)]
    P = step(P, Z, -c / dt)
    segs.extend(tail)
    assert len(segs) == K
    segs = tuple(segs)
    constants = {
        "n": n,
        "beta1": beta1,
        "beta2": beta2,
        "alpha1": alpha1,
        "alpha2": alpha2,
        "v": v.tolist(),
        "u": u.tolist(),
        "c": c.tolist(),
        "y_bar": Ybar.tolist(),
    }
    return MatchingPlan(segs, T, order2, order1, constants, tuple(wit))


def matching_residuals(plan, X, Y):
    """Per-point landing error ``max_k |Phi(X_i)_k - Y_ik|``."""
    out = flow_linear(plan, X)
    return np.max(np.abs(out - np.array(Y, dtype=float, ndmin=2)), axis=1)


# ---------------------------------------------------------------------------
# minimum-norm continuous controls


@dataclass(frozen=True, eq=False)
class MinimumNormPath:
    """Controls ``w(t)`` (and ``b(t)`` with bias augmentation) on a uniform time grid.

    Along the straight-line path ``gamma(s) = (1 - s) X + s Y`` the control at
    ``t = sT`` is the least-Frobenius-norm solution of ``w sigma(gamma(s))^T = (Y - X)^T / T``.
    """

    X: np.ndarray
    Y: np.ndarray
    T: float
    sigma: Callable
    bias: bool
    times: np.ndarray
    controls: np.ndarray
    biases: np.ndarray | None
    min_singular: np.ndarray

    def _solve(self, s):
        G = (1.0 - s) * self.X + s * self.Y
        S = self.sigma(G).T  # d x n
        if self.bias:
            S = np.vstack([S, np.full((1, S.shape[1]), float(self.sigma(np.ones(1))[0]))])
        V = (self.Y - self.X).T / self.T
        W = V @ np.linalg.pinv(S)
        if self.bias:
            return W[:, :-1], W[:, -1] * float(self.sigma(np.ones(1))[0])
        return W, np.zeros(W.shape[0])

    def control_at(self, t):
        """Exact control at time ``t``: ``(w, b)``."""
        return self._solve(float(t) / self.T)

    def interpolated(self, t):
        """Piecewise-linear interpolation of the gridded controls."""
        t = float(t)
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 2))
        lam = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        w = (1 - lam) * self.controls[k] + lam * self.controls[k + 1]
        if self.biases is None:
            return w, np.zeros(w.shape[0])
        return w, (1 - lam) * self.biases[k] + lam * self.biases[k + 1]

    @property
    def max_norm(self):
        return float(np.max(np.linalg.norm(self.controls, axis=(1, 2))))

    @property
    def operator_bound(self):
        """``max_s 1 / sigma_min``: norm of the right inverse along the path."""
        return float(np.max(1.0 / self.min_singular))

    @property
    def empirical_constant(self):
        gap = float(np.max(np.sum(np.abs(self.Y - self.X), axis=1)))
        return 0.0 if gap == 0 else self.T * self.max_norm / gap

    def to_dict(self):
        return {
            "horizon": self.T,
            "times": self.times.tolist(),
            "w": self.controls.tolist(),
            "b": None if self.biases is None else self.biases.tolist(),
            "max_norm": self.max_norm,
            "empirical_constant": self.empirical_constant,
            "operator_bound": self.operator_bound,
        }

    def integrate(self, rtol=1e-10, atol=1e-12, interpolate=False):
        """Endpoints of ``dx/dt = w(t) sigma(x) + b(t)`` started at the rows of ``X``."""
        n, d = self.X.shape
        ctrl = self.interpolated if interpolate else self.control_at

        def rhs(t, z):
            w, b = ctrl(t)
            return (self.sigma(z.reshape(n, d)) @ w.T + b).ravel()

        sol = solve_ivp(rhs, (0.0, self.T), self.X.ravel(), method="DOP853", rtol=rtol, atol=atol,
                        dense_output=True)
        if not sol.success:
            raise RuntimeError(sol.message)
        return sol

    def path_residual(self, rtol=1e-10, atol=1e-12):
        """``max |x(t) - gamma(t/T)|`` over the grid for the integrated trajectories."""
        sol = self.integrate(rtol, atol)
        n, d = self.X.shape
        worst = 0.0
        for t in self.times:
            s = t / self.T
            G = (1.0 - s) * self.X + s * self.Y
            worst = max(worst, float(np.max(np.abs(sol.sol(t).reshape(n, d) - G))))
        return worst


def minimum_norm_path(X, Y, T=1.0, sigma="tanh", n_grid=256, bias=False):
    """Minimum-norm control steering ``X`` to ``Y`` along the straight-line path.

    Raises
    ------
    RankError
        If ``sigma(gamma(s))`` loses full column rank at some grid node.
    """
    X = np.array(X, dtype=float, ndmin=2)
    Y = np.array(Y, dtype=float, ndmin=2)
    if X.shape != Y.shape:
        raise ValueError("X and Y must have the same shape")
    n, d = X.shape
    if (d + bias) < n:
        raise RankError(f"need d >= n{' - 1' if bias else ''} (d={d}, n={n})", s=None, singular_values=None)
    sig = activation(sigma)
    path = MinimumNormPath(X, Y, float(T), sig, bool(bias), np.linspace(0.0, T, n_grid + 1),
                           np.empty(0), None, np.empty(0))
    ws, bs, smin = [], [], []
    prev_sign, prev_s = 0.0, 0.0
    for t in path.times:
        s = t / T
        S = sig((1.0 - s) * X + s * Y).T
        if bias:
            S = np.vstack([S, np.full((1, n), float(sig(np.ones(1))[0]))])
        sv = np.linalg.svd(S, compute_uv=False)
        if sv[-1] <= RANK_TOL * max(sv[0], 1.0):
            raise RankError(f"rank deficient at s={s:.6g}", s=s, singular_values=sv)
        if S.shape[0] == S.shape[1]:
            # a square matrix is singular wherever its determinant changes sign
            sign = float(np.sign(np.linalg.det(S)))
            if prev_sign and sign != prev_sign:
                raise RankError(f"rank lost between s={prev_s:.6g} and s={s:.6g}", s=0.5 * (prev_s + s),
                                singular_values=sv)
            prev_sign, prev_s = sign, s
        smin.append(sv[-1])
        w, b = path._solve(s)
        ws.append(w)
        bs.append(b)
    return MinimumNormPath(X, Y, float(T), sig, bool(bias), path.times, np.array(ws),
                           np.array(bs) if bias else None, np.array(smin))


# ---------------------------------------------------------------------------
# genericity of the rank condition


def _sample_cloud(rng, n, d, distribution, line_dir):
    if distribution == "normal":
        return rng.standard_normal((n, d))
    if distribution == "uniform_positive":
        return rng.uniform(0.0, 1.0, (n, d))
    if distribution == "line":
        return rng.standard_normal(n)[:, None] * line_dir[None, :]
    raise ValueError(f"unknown distribution {distribution!r}")


def genericity_probe(n, d, sigma="tanh", distribution="normal", trials=1000, seed=0):
    """Fraction of sampled clouds ``Y`` (n points in R^d) with ``sigma(Y)`` of full rank ``n``.

    ``distribution`` is ``normal``, ``uniform_positive`` or ``line`` (points on a
    random line through the origin, a degenerate case).
    """
    if d < n:
        raise ValueError("full rank needs d >= n")
    sig = activation(sigma)
    rng = quadrature.rng_from_seed(seed)
    line_dir = rng.standard_normal(d)
    line_dir /= np.linalg.norm(line_dir)
    hits = 0
    for _ in range(trials):
        Y = _sample_cloud(rng, n, d, distribution, line_dir)
        sv = np.linalg.svd(sig(Y), compute_uv=False)
        hits += bool(sv[-1] > RANK_TOL * max(sv[0], 1.0))
    return hits / trials
