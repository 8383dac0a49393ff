"""Control synthesis for small relative entropy between the transported base and a target.

The schedule has two stages on ``[0, T]``:

* ``[0, T/2]`` brings the base density close to the target in L1 (TV stage);
* ``[T/2, T]`` applies ``2d`` one-sided exponential moves beyond ``|x_k| = M_bar``
  that fatten (or thin) the tails without touching the cube ``[-M_bar, M_bar]^d``.

Fattening the tails of the solution past a Gaussian envelope of the target
makes ``sup target / solution`` finite, which turns the L1 bound into a KL
bound. The reverse objective thins the solution tails instead.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize, special

from . import divergence, quadrature
from .core import (
    ControlSchedule,
    ControlSegment,
    PiecewiseGaussianDensity,
    TargetSpec,
    box_mass,
    n_cells,
    select_truncation,
    switch_budget,
)
from .densities import CallableDensity, Gaussian, as_density
from .errors import (
    BudgetError,
    CertificationError,
    ReluFlowError,
    SpectralError,
    SynthesisError,
    UnsupportedDimensionError,
)
from .flow import density_at, log_density_at, pushforward_density

DIRECTIONS = ("dominate_target", "dominated_by_target")
OMEGA_MARGIN = 1.05
OMEGA_FLOOR = 1.0
ALPHA_MARGIN = 0.9
DOUBLING_CAP = 30
CDF_PANELS = 2**15
QUANTILE_TAIL = 1e-9


@dataclass(frozen=True)
class TailPlan:
    sigma_env: float
    alpha: float
    omega: float
    M_bar: float
    M_bar_bar: float
    direction: str

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        for name in ("sigma_env", "alpha", "omega", "M_bar", "M_bar_bar"):
            object.__setattr__(self, name, float(getattr(self, name)))

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True, eq=False)
class TVStage:
    """Schedule of the first stage together with its measured L1 gap."""

    schedule: ControlSchedule
    tv: float
    R: float | None
    h: float | None
    budget: int

    @property
    def switch_count(self):
        return self.schedule.switch_count


def _finite_or_none(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


@dataclass(frozen=True, eq=False)
class SynthesisReport:
    schedule: ControlSchedule
    objective: str
    epsilon: float
    horizon: float
    tv_achieved: float
    kl_achieved: float
    kl_error: float
    sup_ratio: float
    switch_count: int
    switch_budget: int
    tail_plan: TailPlan
    stage_tv: float
    R: float | None
    h: float | None
    rounds: int
    decomposition: dict = field(default_factory=dict)
    certificates: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "objective": self.objective,
            "epsilon": self.epsilon,
            "horizon": self.horizon,
            "tv_achieved": self.tv_achieved,
            "kl_achieved": self.kl_achieved,
            "kl_error": self.kl_error,
            "sup_ratio": _finite_or_none(self.sup_ratio),
            "switch_count": self.switch_count,
            "switch_budget": self.switch_budget,
            "stage_tv": self.stage_tv,
            "R": self.R,
            "h": self.h,
            "rounds": self.rounds,
            "tail_plan": self.tail_plan.to_dict(),
            "decomposition": {k: _finite_or_none(v) for k, v in self.decomposition.items()},
            "certificates": self.certificates,
            "schedule": self.schedule.to_dict(),
        }

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, **kwargs)

    CSV_FIELDS = (
        "objective", "epsilon", "kl_achieved", "kl_error", "tv_achieved", "sup_ratio",
        "switch_count", "switch_budget", "sigma_env", "omega", "M_bar", "M_bar_bar",
    )

    def csv_row(self):
        plan = self.tail_plan
        return {
            "objective": self.objective,
            "epsilon": self.epsilon,
            "kl_achieved": self.kl_achieved,
            "kl_error": self.kl_error,
            "tv_achieved": self.tv_achieved,
            "sup_ratio": self.sup_ratio,
            "switch_count": self.switch_count,
            "switch_budget": self.switch_budget,
            "sigma_env": plan.sigma_env,
            "omega": plan.omega,
            "M_bar": plan.M_bar,
            "M_bar_bar": plan.M_bar_bar,
        }


def reports_to_csv(reports, fh=None):
    buf = io.StringIO() if fh is None else fh
    writer = csv.DictWriter(buf, fieldnames=SynthesisReport.CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for r in reports:
        writer.writerow(r.csv_row())
    return buf.getvalue() if fh is None else None


# ---------------------------------------------------------------------------
# envelope constants


def envelope_sigma(solution: PiecewiseGaussianDensity, mode="lower"):
    """Gaussian envelope width from the piece covariances.

    ``lower``: ``sigma^2 = min_i min eig(Sigma_i) / 2``;
    ``upper``: ``sigma^2 = 2 max_i max eig(Sigma_i)``.
    """
    if mode not in ("lower", "upper"):
        raise ValueError("mode must be 'lower' or 'upper'")
    lo, hi = math.inf, 0.0
    for cov in solution.covariances():
        cov = 0.5 * (cov + cov.T)
        eig = np.linalg.eigvalsh(cov)
        if not np.all(np.isfinite(eig)) or eig[0] <= 0:
            raise SpectralError(f"piece covariance is not positive definite (eigenvalues {eig})")
        lo, hi = min(lo, eig[0]), max(hi, eig[-1])
    var = 0.5 * lo if mode == "lower" else 2.0 * hi
    return math.sqrt(var)


def omega_threshold(d, horizon, sigma_target, sigma_env, direction="dominate_target"):
    """Tail-stage rate: 5% above ``(2d/T) log(var ratio)``, or 1 when that is vacuous.

    ``dominate_target`` fattens the envelope (ratio ``sigma_target^2/sigma_env^2``);
    ``dominated_by_target`` thins it (ratio ``sigma_env^2/sigma_target^2``).
    """
    if min(d, horizon, sigma_target, sigma_env) <= 0:
        raise ValueError("all arguments must be positive")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    num, den = (sigma_target, sigma_env) if direction == "dominate_target" else (sigma_env, sigma_target)
    log_ratio = 2.0 * math.log(num / den)
    if log_ratio <= 0:
        return OMEGA_FLOOR
    return OMEGA_MARGIN * (2.0 * d / horizon) * log_ratio


def tail_taming_segments(d, M_bar, omega, stage, direction="dominate_target"):
    """``2d`` segments on ``stage``: for each axis, one move past ``+M_bar`` then one past ``-M_bar``."""
    if M_bar <= 0 or omega <= 0:
        raise ValueError("M_bar and omega must be positive")
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    t0, t1 = stage
    times = np.linspace(t0, t1, 2 * d + 1)
    sign = 1.0 if direction == "dominate_target" else -1.0
    segs = []
    for k in range(d):
        e = np.zeros(d)
        e[k] = 1.0
        segs.append(ControlSegment(times[2 * k], times[2 * k + 1], sign * omega * e, e, -M_bar))
        segs.append(ControlSegment(times[2 * k + 1], times[2 * k + 2], -sign * omega * e, -e, -M_bar))
    return segs


def gaussian_envelope(sigma, alpha, d):
    """``alpha exp(-|x|^2 / 2 sigma^2)`` as a one-piece density object."""
    amp = alpha * (2.0 * math.pi * sigma**2) ** (d / 2.0)
    return PiecewiseGaussianDensity.gaussian(np.zeros(d), sigma**2 * np.eye(d), amplitude=amp)


# ---------------------------------------------------------------------------
# ray scans


def ray_directions(d, seed=0):
    """Fixed scan directions, each scaled to unit sup-norm.

    ``4^d * 32`` seeded Gaussian directions plus the axes and the diagonals.
    """
    if d == 1:
        return np.array([[1.0], [-1.0]])
    rng = quadrature.rng_from_seed(seed)
    v = rng.standard_normal((4**d * 32, d))
    eye = np.eye(d)
    signs = np.array(np.meshgrid(*([[-1.0, 1.0]] * d), indexing="ij")).reshape(d, -1).T
    v = np.vstack([eye, -eye, signs, v])
    return v / np.max(np.abs(v), axis=1, keepdims=True)


def _ray_points(d, r0, r1, seed, n_radii=48):
    radii = np.geomspace(r0, r1, n_radii)
    dirs = ray_directions(d, seed)
    return (radii[None, :, None] * dirs[:, None, :]).reshape(-1, d)


def domination_margin(result, target, radius, direction="dominate_target", seed=0):
    """Worst log ratio on the rays between sup-radius ``radius`` and ``8 radius``.

    For ``dominate_target`` the ratio is ``envelope / result``, otherwise
    ``result / envelope``; domination holds when the returned value is negative.
    Returns ``(worst_log_ratio, worst_point)``.
    """
    target = _as_target(target)
    pts = _ray_points(target.dim, radius, 8.0 * radius, seed)
    lr = result.logpdf(pts) if hasattr(result, "logpdf") else np.log(result(pts))
    le = target.envelope_logpdf(pts)
    with np.errstate(invalid="ignore"):
        g = le - lr if direction == "dominate_target" else lr - le
    g = np.where(np.isnan(g), -np.inf, g)
    k = int(np.argmax(g))
    return float(g[k]), pts[k]


def certify_tail_domination(result, target, plan: TailPlan, seed=0, cap=DOUBLING_CAP):
    """Smallest doubling radius ``M_bar_bar >= plan.M_bar`` past which domination holds on all rays."""
    radius = plan.M_bar
    worst = -math.inf
    for _ in range(cap + 1):
        g, _ = domination_margin(result, target, radius, plan.direction, seed)
        if g < 0:
            return radius
        worst = g if worst == -math.inf else min(worst, g)
        radius *= 2.0
    raise CertificationError(
        f"tail domination not certified up to radius {radius / 2.0:g}",
        worst_ratio=math.exp(min(worst, 700.0)),
        radius=radius / 2.0,
    )


def find_tail_radius(density, sigma_tail, mode="upper_bounded", dim=1, r_max=None, seed=0):
    """Smallest radius on a fine grid beyond which the Gaussian tail hypothesis holds along rays.

    Raises ``ValueError`` when it fails at the outer scan radius.
    """
    dens = as_density(density, dim)
    dim = getattr(dens, "dim", dim)
    r_max = 16.0 * sigma_tail * max(1.0, math.sqrt(dim)) if r_max is None else r_max
    radii = np.linspace(r_max / 512.0, r_max, 512)
    dirs = ray_directions(dim, seed)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = (radii[None, :, None] * dirs[:, None, :]).reshape(-1, dim)
    lr = dens.logpdf(pts)
    le = -0.5 * dim * math.log(2 * math.pi * sigma_tail**2) - 0.5 * np.sum(pts * pts, axis=1) / sigma_tail**2
    ok = (lr <= le) if mode == "upper_bounded" else (lr >= le)
    ok = ok.reshape(dirs.shape[0], radii.shape[0])
    bad = ~ok
    if bad[:, -1].any():
        raise ValueError("tail hypothesis fails at the outer scan radius")
    last_bad = np.where(bad.any(axis=1), radii.shape[0] - 1 - np.argmax(bad[:, ::-1], axis=1), -1)
    k = int(last_bad.max())
    return float(radii[k + 1]) if k >= 0 else float(radii[0])


def _as_target(target):
    if isinstance(target, TargetSpec):
        return target
    raise TypeError("expected a TargetSpec")


def check_tail_hypothesis(target: TargetSpec, seed=0):
    """Worst log violation of the declared tail bound on rays from ``M`` to ``64 M``."""
    d = target.dim
    dirs = ray_directions(d, seed)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.geomspace(target.radius, 64.0 * max(target.radius, target.sigma_tail), 96)
    pts = (radii[None, :, None] * dirs[:, None, :]).reshape(-1, d)
    lr, le = target.logpdf(pts), target.envelope_logpdf(pts)
    with np.errstate(invalid="ignore"):
        g = lr - le if target.tail_mode == "upper_bounded" else le - lr
    g = np.where(np.isnan(g), -np.inf, g)
    k = int(np.argmax(g))
    return float(g[k]), pts[k]


# ---------------------------------------------------------------------------
# TV stage in one dimension


def _base_pgd(base):
    if isinstance(base, PiecewiseGaussianDensity):
        return base
    if isinstance(base, Gaussian):
        return PiecewiseGaussianDensity.gaussian(base.mean, base.cov)
    raise TypeError("base must be a Gaussian or a PiecewiseGaussianDensity")


def _base_moments(pgd):
    if len(pgd.pieces) != 1 or pgd.pieces[0].region.halfspaces:
        raise ValueError("the TV stage needs an unrestricted Gaussian base")
    _, mean, cov = pgd.pieces[0].gaussian_params(pgd.base_mean, pgd.base_cov)
    return mean, cov


class TabulatedCDF:
    """Distribution function of a 1D density, tabulated on a fine composite GL grid.

    Values inside a panel are completed with a panel-local GL rule. Left and
    right cumulative sums are both kept so upper-tail quantiles are solved
    through the survival function without cancellation.
    """

    def __init__(self, density, lo, hi, panels=CDF_PANELS):
        self.pdf = lambda y: np.asarray(density.pdf(np.asarray(y, float).reshape(-1, 1)), float)
        self.edges = np.linspace(lo, hi, panels + 1)
        x, w = quadrature.gl_rule(self.edges)
        mass = (self.pdf(x) * w).reshape(panels, -1).sum(axis=1)
        self.total = float(np.sum(mass))
        self.cum = np.concatenate([[0.0], np.cumsum(mass)]) / self.total
        self.ccum = np.concatenate([np.cumsum(mass[::-1])[::-1], [0.0]]) / self.total
        self._nodes, self._weights = np.polynomial.legendre.leggauss(quadrature.GL_ORDER)

    def _panel(self, y):
        return np.clip(np.searchsorted(self.edges, y, side="right") - 1, 0, len(self.edges) - 2)

    def _partial(self, a, b):
        half = 0.5 * (b - a)
        nodes = a[:, None] + half[:, None] * (self._nodes[None, :] + 1.0)
        return half * (self.pdf(nodes.ravel()).reshape(nodes.shape) @ self._weights) / self.total

    def cdf(self, y):
        yc = np.clip(np.atleast_1d(np.asarray(y, float)), self.edges[0], self.edges[-1])
        k = self._panel(yc)
        return np.clip(self.cum[k] + self._partial(self.edges[k], yc), 0.0, 1.0)

    def sf(self, y):
        yc = np.clip(np.atleast_1d(np.asarray(y, float)), self.edges[0], self.edges[-1])
        k = self._panel(yc)
        return np.clip(self.ccum[k + 1] + self._partial(yc, self.edges[k + 1]), 0.0, 1.0)

    def ppf(self, u, q=None, iters=40):
        """Quantile at level ``u``; pass ``q = 1 - u`` for accuracy in the upper tail."""
        u = np.atleast_1d(np.asarray(u, float))
        q = 1.0 - u if q is None else np.atleast_1d(np.asarray(q, float))
        upper = u > 0.5
        k_lo = np.searchsorted(self.cum, u, side="right") - 1
        k_up = np.searchsorted(-self.ccum, -q, side="left") - 1
        k = np.clip(np.where(upper, k_up, k_lo), 0, len(self.edges) - 2)
        lo, hi = self.edges[k].copy(), self.edges[k + 1].copy()
        y = 0.5 * (lo + hi)
        for _ in range(iters):
            f = np.where(upper, q - self.sf(y), self.cdf(y) - u)
            lo = np.where(f < 0, y, lo)
            hi = np.where(f > 0, y, hi)
            dens = self.pdf(y) / self.total
            with np.errstate(divide="ignore", invalid="ignore"):
                step = y - f / dens
            bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
            new = np.where(bad, 0.5 * (lo + hi), step)
            done = np.all(np.abs(new - y) <= 1e-15 * np.maximum(1.0, np.abs(y)))
            y = new
            if done:
                break
        return y


def monotone_knots(mean, sd, target_cdf, R, h, tail=QUANTILE_TAIL):
    """Knots ``z_j`` and images ``y_j = F_target^{-1}(F_base(z_j))`` of the rearrangement map.

    Knots are the grid of ``[-R, R]`` (continued with the same spacing out to the
    base quantiles ``tail`` and ``1 - tail``) together with the base-space
    preimages of the target-space grid.
    """
    z_lo, z_hi = mean + sd * special.ndtri(tail), mean - sd * special.ndtri(tail)
    n = n_cells(R, h)
    step = 2.0 * R / n
    k0 = math.floor((min(z_lo, -R) + R) / step)
    k1 = math.ceil((max(z_hi, R) + R) / step)
    grid = -R + step * np.arange(k0, k1 + 1)
    grid = grid[(grid > z_lo) & (grid < z_hi)]
    ty = np.linspace(-R, R, n + 1)
    u_t, q_t = target_cdf.cdf(ty), target_cdf.sf(ty)
    keep = (u_t > tail) & (q_t > tail)
    u_t, q_t = u_t[keep], q_t[keep]
    pre = mean + sd * np.where(u_t <= 0.5, special.ndtri(u_t), -special.ndtri(q_t))
    z = np.unique(np.concatenate([[z_lo, z_hi], grid, pre]))
    z = z[np.concatenate([[True], np.diff(z) > 1e-9 * max(1.0, sd)])]
    zs = (z - mean) / sd
    y = target_cdf.ppf(special.ndtr(zs), special.ndtr(-zs))
    keep = np.concatenate([[True], np.diff(y) > 0])
    return z[keep], y[keep]


def realize_monotone_map(z, y, log_tol=1e-9):
    """Primitive moves ``(w * duration, a, b)`` realizing the piecewise-linear map ``z_j -> y_j``.

    One translation, one dilation to the left of ``y_0`` and one dilation to the
    right of each image knot; slopes beyond the end knots are continued.
    Near-identity moves are dropped.
    """
    slopes = np.diff(y) / np.diff(z)
    moves = []
    shift = y[0] - z[0]
    if abs(shift) > 1e-9 * max(1.0, abs(y[0])):
        moves.append((shift, 0.0, 1.0))
    if abs(math.log(slopes[0])) > log_tol:
        moves.append((-math.log(slopes[0]), -1.0, y[0]))
    current = 1.0
    for j, m in enumerate(slopes):
        g = math.log(m / current)
        if abs(g) > log_tol:
            moves.append((g, 1.0, -y[j]))
            current = m
    return moves


def schedule_from_moves(moves, stage, d):
    """Spread unit-duration moves ``(w * duration, a, b)`` evenly over ``stage``."""
    t0, t1 = stage
    if not moves:
        return ControlSchedule((), t1, dim=d)
    dt = (t1 - t0) / len(moves)
    params = [(np.atleast_1d(np.asarray(wd, float)) / dt, a, b) for wd, a, b in moves]
    return ControlSchedule.from_parameters(params, t0, t1, horizon=t1)


def _target_box(target, tail=1e-18):
    lo, hi = target.support_box(tail)
    return np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)


def tv_stage_1d(base, target: TargetSpec, eps_tv, stage, R=None, h=None, max_halvings=14):
    """First stage in 1D: piecewise-linear monotone rearrangement realized by ReLU moves.

    ``h`` halves until the measured L1 gap is at most ``eps_tv``.
    """
    pgd = _base_pgd(base)
    if pgd.dim != 1 or target.dim != 1:
        raise UnsupportedDimensionError("the constructive TV stage is one-dimensional")
    if not 0 < eps_tv < 2:
        raise ValueError("eps_tv must lie in (0, 2)")
    mean, cov = _base_moments(pgd)
    m, sd = float(mean[0]), math.sqrt(cov[0, 0])
    if R is None or h is None:
        R, h = select_truncation(pgd, target.density, min(eps_tv, 0.5))
    lo, hi = _target_box(target)
    tcdf = TabulatedCDF(target.density, lo[0], hi[0])
    t1 = stage[1]
    best = math.inf
    for _ in range(max_halvings + 1):
        z, y = monotone_knots(m, sd, tcdf, R, h)
        schedule = schedule_from_moves(realize_monotone_map(z, y), stage, 1)
        budget = switch_budget(R, h, 1)
        dom = (min(lo[0], y[0]), max(hi[0], y[-1]))
        gap = _stage_tv(pgd, schedule, t1, target, y, dom)
        best = min(best, gap)
        if schedule.switch_count > budget:
            raise BudgetError(
                f"{schedule.switch_count} switches exceed the budget {budget}",
                achieved_tv=gap, switches=schedule.switch_count, budget=budget,
            )
        if gap <= eps_tv:
            return TVStage(schedule, gap, R, h, budget)
        h /= 2.0
    raise BudgetError(f"TV target {eps_tv} not met after {max_halvings} halvings", achieved_tv=best)


def _stage_tv(pgd, schedule, t, target, breaks, domain):
    realized = CallableDensity(
        lambda p: density_at(pgd, schedule, t, p),
        dim=pgd.dim,
        log_func=lambda p: log_density_at(pgd, schedule, t, p),
        breaks=tuple(breaks),
    )
    return divergence.tv(realized, target.density, method="quadrature", domain=domain).value


# ---------------------------------------------------------------------------
# TV stage fallback for d >= 2


def _unpack(p, d):
    return (p[:d], p[d:2 * d], float(p[2 * d]))


def tv_stage_nd(base, target: TargetSpec, eps_tv, stage, budget=64, seed=0, max_moves=6, starts=3):
    """Best-effort first stage for ``d >= 2``.

    Starts from the mean-matching translation and greedily appends moves tuned by
    Nelder-Mead on a fixed quadrature (d=2) or Monte Carlo (d>2) L1 objective.
    The result may miss ``eps_tv``; the achieved gap is reported.
    """
    pgd = _base_pgd(base)
    d = pgd.dim
    if d < 2:
        raise UnsupportedDimensionError("use tv_stage_1d in one dimension")
    lo_b, hi_b = pgd.support_box(1e-6)
    lo_t, hi_t = target.support_box(1e-6)
    lo, hi = np.minimum(lo_b, lo_t), np.maximum(hi_b, hi_t)
    if d == 2:
        pts, wts = quadrature.box_rule(lo, hi, 16, order=6)
    else:
        pts = lo + (hi - lo) * quadrature.rng_from_seed(seed).random((4096, d))
        wts = np.full(pts.shape[0], float(np.prod(hi - lo)) / pts.shape[0])
    tvals = np.asarray(target.pdf(pts), float)

    def objective(moves):
        sched = schedule_from_moves(moves, (0.0, 1.0), d)
        vals = np.exp(log_density_at(pgd, sched, 1.0, pts))
        return float(np.dot(wts, np.abs(vals - tvals)))

    moves = []
    current = objective(moves)
    mass = float(np.dot(wts, tvals))
    shift = (wts * tvals) @ pts / mass - _base_moments(pgd)[0]
    if np.linalg.norm(shift) > 1e-9:
        cand = [(shift, np.zeros(d), 1.0)]
        val = objective(cand)
        if val < current:
            moves, current = cand, val
    rng = quadrature.rng_from_seed(seed)
    cap = min(max_moves, budget + 1)
    while current > eps_tv and len(moves) < cap:
        best_val, best_move = current, None
        for _ in range(starts):
            a0 = rng.standard_normal(d)
            x0 = np.concatenate([0.3 * rng.standard_normal(d), a0 / np.linalg.norm(a0), [rng.standard_normal()]])
            res = optimize.minimize(
                lambda p: objective(moves + [_unpack(p, d)]), x0, method="Nelder-Mead",
                options={"maxiter": 60 * (2 * d + 1), "xatol": 1e-6, "fatol": 1e-8},
            )
            if res.fun < best_val:
                best_val, best_move = float(res.fun), _unpack(res.x, d)
        if best_move is None or best_val > current - 1e-4:
            break
        moves.append(best_move)
        current = best_val
    schedule = schedule_from_moves(moves, stage, d)
    return TVStage(schedule, current, None, None, budget)


# ---------------------------------------------------------------------------
# envelope placement


def _cube_grid(M_bar, d, seed):
    if d == 1:
        return np.linspace(-M_bar, M_bar, 2049).reshape(-1, 1)
    if d == 2:
        g = np.linspace(-M_bar, M_bar, 129)
        a, b = np.meshgrid(g, g, indexing="ij")
        return np.stack([a.ravel(), b.ravel()], axis=1)
    rng = quadrature.rng_from_seed(seed)
    return M_bar * (2.0 * rng.random((4096, d)) - 1.0)


def axis_bound(solution: PiecewiseGaussianDensity, sigma):
    """Largest axis radius past which each piece's log ratio to the envelope is monotone."""
    bound = 0.0
    d = solution.dim
    for piece in solution.pieces:
        _, mean, cov = piece.gaussian_params(solution.base_mean, solution.base_cov)
        P = np.linalg.inv(cov)
        for k in range(d):
            for sgn in (1.0, -1.0):
                e = np.zeros(d)
                e[k] = sgn
                curv = e @ P @ e - 1.0 / sigma**2
                if abs(curv) > 1e-15:
                    bound = max(bound, (e @ P @ mean) / curv)
    return bound


def place_envelope(solution, target: TargetSpec, sigma, eps0, mode="lower", seed=0, cap=DOUBLING_CAP):
    """Choose ``(alpha, M_bar)`` for the Gaussian envelope of the stage-one solution.

    ``M_bar`` doubles from ``max(M, axis bound)`` until the envelope stays below
    (``lower``) or above (``upper``) the solution on rays outside the cube and
    both the solution and the target put mass above ``1 - eps0`` in the cube.
    ``alpha`` is 0.9 times the extreme ratio over a grid of the cube.
    """
    d = solution.dim
    M_bar = max(target.radius, axis_bound(solution, sigma), 1e-3)
    for _ in range(cap + 1):
        grid = _cube_grid(M_bar, d, seed)
        lr = solution.logpdf(grid) + 0.5 * np.sum(grid * grid, axis=1) / sigma**2
        log_alpha = np.min(lr) + math.log(ALPHA_MARGIN) if mode == "lower" else np.max(lr) - math.log(ALPHA_MARGIN)
        pts = _ray_points(d, M_bar, 8.0 * M_bar, seed)
        env = log_alpha - 0.5 * np.sum(pts * pts, axis=1) / sigma**2
        sol = solution.logpdf(pts)
        outside_ok = np.all(env < sol) if mode == "lower" else np.all(env > sol)
        if outside_ok and np.isfinite(log_alpha):
            m_sol = solution.mass((-M_bar * np.ones(d), M_bar * np.ones(d)))
            m_tgt = box_mass(target.density, M_bar, d)
            if min(m_sol, m_tgt) > 1.0 - eps0:
                return math.exp(log_alpha), M_bar
        M_bar *= 2.0
    raise CertificationError("no envelope placement found within the doubling cap", radius=M_bar / 2.0)


# ---------------------------------------------------------------------------
# end-to-end


def _decomposition(half, final, target, M_bar, eps0, seed):
    d = half.dim
    lo, hi = -M_bar * np.ones(d), M_bar * np.ones(d)
    method = "quadrature" if d <= 2 else "monte_carlo"
    interior = divergence.tv(half, target.density, method=method, seed=seed, domain=(lo, hi)).value
    ext_sol = max(0.0, 1.0 - final.mass((lo, hi)))
    ext_tgt = max(0.0, 1.0 - box_mass(target.density, M_bar, d))
    total = interior + ext_sol + ext_tgt
    return {
        "interior_gap": interior,
        "exterior_solution_mass": ext_sol,
        "exterior_target_mass": ext_tgt,
        "bound": total,
        "three_eps0": 3.0 * eps0,
        "bound_ok": total < 3.0 * eps0,
    }


def _full_domain(final, target, tail=1e-12):
    # a wider box starves the fixed panel rule near the bulk
    lo_f, hi_f = final.support_box(tail)
    lo_t, hi_t = target.support_box(tail)
    return np.minimum(lo_f, lo_t), np.maximum(hi_f, hi_t)


def synthesize(base, target: TargetSpec, eps, T, objective="kl", seed=0, max_rounds=5, nd_budget=64):
    """Build a schedule on ``[0, T]`` whose endpoint density is within ``eps`` of the target.

    ``objective='kl'`` controls ``KL(target || solution)`` and needs an
    ``upper_bounded`` target; ``'reverse_kl'`` controls ``KL(solution || target)``
    and needs a ``lower_bounded`` one. The TV tolerance starts at ``eps`` and is
    divided by 4 each round until the KL goal is met.

    Raises
    ------
    SynthesisError
        With ``kind`` in ``{"tail_hypothesis", "certification", "budget", "not_reached"}``.
    """
    if objective not in ("kl", "reverse_kl"):
        raise ValueError("objective must be 'kl' or 'reverse_kl'")
    if eps <= 0 or T <= 0:
        raise ValueError("eps and T must be positive")
    pgd = _base_pgd(base)
    d = pgd.dim
    mode_needed = "upper_bounded" if objective == "kl" else "lower_bounded"
    if target.tail_mode != mode_needed:
        raise SynthesisError("tail_hypothesis", f"objective {objective} needs a {mode_needed} target")
    worst, where = check_tail_hypothesis(target, seed)
    if worst > 1e-9:
        raise SynthesisError(
            "tail_hypothesis",
            "target violates its declared Gaussian tail bound",
            {"log_violation": worst, "point": where.tolist()},
        )
    direction = "dominate_target" if objective == "kl" else "dominated_by_target"
    env_mode = "lower" if objective == "kl" else "upper"
    eps_tv = min(eps, 0.5)
    last = None
    for rnd in range(max_rounds):
        try:
            if d == 1:
                stage = tv_stage_1d(pgd, target, eps_tv, (0.0, T / 2.0))
            else:
                stage = tv_stage_nd(pgd, target, eps_tv, (0.0, T / 2.0), budget=nd_budget, seed=seed)
        except BudgetError as exc:
            raise SynthesisError("budget", str(exc), {"achieved_tv": exc.achieved_tv, "budget": exc.budget})
        half = pushforward_density(pgd, stage.schedule)
        sigma = envelope_sigma(half, env_mode)
        omega = omega_threshold(d, T, target.sigma_tail, sigma, direction)
        eps0 = max(stage.tv, eps_tv)
        try:
            alpha, M_bar = place_envelope(half, target, sigma, eps0, env_mode, seed)
            tail = tail_taming_segments(d, M_bar, omega, (T / 2.0, T), direction)
            tail_sched = ControlSchedule(
                (ControlSegment(0.0, T / 2.0, np.zeros(d), np.zeros(d), 0.0),) + tuple(tail), T
            )
            envelope_T = pushforward_density(gaussian_envelope(sigma, alpha, d), tail_sched)
            plan = TailPlan(sigma, alpha, omega, M_bar, M_bar, direction)
            M_bb = certify_tail_domination(envelope_T, target, plan, seed)
        except CertificationError as exc:
            raise SynthesisError(
                "certification", str(exc), {"worst_ratio": exc.worst_ratio, "radius": exc.radius}
            )
        plan = TailPlan(sigma, alpha, omega, M_bar, M_bb, direction)
        schedule = stage.schedule.then(tail, T)
        final = pushforward_density(half, tail_sched)
        dom = _full_domain(final, target)
        method = "quadrature" if d <= 2 else "monte_carlo"
        num, den = (target.density, final) if objective == "kl" else (final, target.density)
        kl_est = divergence.kl(num, den, method=method, seed=seed, domain=dom)
        tv_est = divergence.tv(num, den, method=method, seed=seed, domain=dom)
        ratio = divergence.sup_ratio(num, den, domain=dom, seed=seed)
        last = (stage, plan, schedule, final, half, kl_est, tv_est, ratio, eps0, rnd)
        if kl_est.value <= eps:
            break
        eps_tv /= 4.0
    else:
        stage, plan, schedule, final, half, kl_est, tv_est, ratio, eps0, rnd = last
        raise SynthesisError(
            "not_reached",
            f"KL {kl_est.value:.4g} above {eps} after {max_rounds} rounds",
            {"kl_achieved": kl_est.value, "tv_achieved": tv_est.value},
        )
    cert = divergence.pinsker_certificates(num, den, kl_est=kl_est, tv_est=tv_est, ratio=ratio)
    if stage.R is not None:
        budget = switch_budget(stage.R, stage.h, d)
    else:
        budget = stage.budget + 2 * d
    return SynthesisReport(
        schedule=schedule,
        objective=objective,
        epsilon=eps,
        horizon=T,
        tv_achieved=tv_est.value,
        kl_achieved=kl_est.value,
        kl_error=kl_est.error_bar,
        sup_ratio=ratio,
        switch_count=schedule.switch_count,
        switch_budget=budget,
        tail_plan=plan,
        stage_tv=stage.tv,
        R=stage.R,
        h=stage.h,
        rounds=rnd + 1,
        decomposition=_decomposition(half, final, target, plan.M_bar, eps0, seed),
        certificates=cert.to_dict(),
    )


def solution_densities(base, report: SynthesisReport):
    """``(rho(T/2), rho(T))`` of a finished synthesis, as exact piecewise Gaussians."""
    pgd = _base_pgd(base)
    T = report.horizon
    return pushforward_density(pgd, report.schedule, T / 2.0), pushforward_density(pgd, report.schedule, T)
