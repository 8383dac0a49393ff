"""Divergence estimators between densities and the Pinsker-type certificates built on them.

All integrands are formed from log densities so that far-tail ratios neither
overflow nor lose precision. TV is the unnormalized L1 distance, ranging over
``[0, 2]``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np
from scipy import optimize, special

from . import quadrature
from .densities import as_density
from .errors import AbsoluteContinuityError

QUAD_LEVELS = {1: (256, 512), 2: (32, 64)}
MC_SAMPLES = 2**16
DOMAIN_TAIL = 1e-8
CSV_FIELDS = ("name", "value", "error_bar", "method", "seed")


@dataclass(frozen=True)
class DivergenceEstimate:
    value: float
    error_bar: float
    method: str
    seed: int | None = None
    name: str = ""

    def to_row(self):
        return {k: v for k, v in asdict(self).items() if k in CSV_FIELDS}


def write_csv(estimates, fh=None):
    """One row per estimate; returns the CSV text when ``fh`` is None."""
    buf = io.StringIO() if fh is None else fh
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for est in estimates:
        row = est.to_row()
        row["seed"] = "" if row["seed"] is None else row["seed"]
        writer.writerow(row)
    return buf.getvalue() if fh is None else None


# ---------------------------------------------------------------------------
# integration plumbing


def _support(dens, tail):
    if hasattr(dens, "support_box"):
        try:
            lo, hi = dens.support_box(tail)
            return np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
        except ValueError:
            return None
    return None


def default_domain(p, q, tail=DOMAIN_TAIL):
    """Smallest box containing both densities' ``1 - tail`` boxes."""
    boxes = [b for b in (_support(p, tail), _support(q, tail)) if b is not None]
    if not boxes:
        raise ValueError("neither density declares a support box; pass domain=(lo, hi)")
    lo = np.min([b[0] for b in boxes], axis=0)
    hi = np.max([b[1] for b in boxes], axis=0)
    return lo, hi


def _breakpoints(dens, d):
    if d == 1 and hasattr(dens, "breakpoints"):
        return [tuple(dens.breakpoints())]
    if hasattr(dens, "axis_breakpoints"):
        return dens.axis_breakpoints()
    return [()] * d


def _resolve(p, q, method, seed, domain):
    p, q = as_density(p), as_density(q)
    d = p.dim
    if q.dim != d:
        raise ValueError("densities live in different dimensions")
    if method is None:
        method = "quadrature" if d <= 2 else "monte_carlo"
    if method not in ("quadrature", "monte_carlo"):
        raise ValueError(f"unknown method {method!r}")
    if method == "quadrature" and d > 2:
        raise ValueError("quadrature is available for d <= 2 only")
    if method == "monte_carlo" and seed is None:
        raise ValueError("monte_carlo estimates need an explicit seed")
    if domain is None:
        domain = default_domain(p, q)
    lo, hi = (np.atleast_1d(np.asarray(v, float)) for v in domain)
    return p, q, d, method, (lo, hi)


def _check_continuity(lp, lq, pts):
    bad = np.isneginf(lq) & np.isfinite(lp)
    if bad.any():
        w = pts[np.argmax(bad)]
        raise AbsoluteContinuityError(
            f"reference density vanishes at {w.tolist()} where the other is positive", witness=w
        )


def _nodes(p, q, d, lo, hi, n_panels):
    breaks = [tuple(sorted(set(a) | set(b))) for a, b in zip(_breakpoints(p, d), _breakpoints(q, d))]
    return quadrature.box_rule(lo, hi, n_panels, breaks)


def _estimate(integrand, p, q, method, seed, domain, name, log_space=False):
    """Integrate ``integrand(lp, lq, pts)`` (or its exp when ``log_space``) over the domain.

    Quadrature reports the gap between two panel levels as its error bar;
    Monte Carlo reports the standard error and samples from ``q`` when it can.
    """
    p, q, d, method, (lo, hi) = _resolve(p, q, method, seed, domain)
    if method == "quadrature":
        vals = []
        for n_panels in QUAD_LEVELS[d]:
            pts, w = _nodes(p, q, d, lo, hi, n_panels)
            g = integrand(p.logpdf(pts), q.logpdf(pts), pts)
            if log_space:
                vals.append(float(special.logsumexp(g, b=w)))
            else:
                vals.append(float(np.dot(w, g)))
        return DivergenceEstimate(vals[1], abs(vals[1] - vals[0]), method, seed, name)
    rng = quadrature.rng_from_seed(seed)
    if hasattr(q, "sample"):
        pts = q.sample(MC_SAMPLES, rng)
        lq = q.logpdf(pts)
        g = integrand(p.logpdf(pts), lq, pts)
        if log_space:
            terms = g - lq
        else:
            terms = g * np.exp(-lq)
    else:
        pts = lo + (hi - lo) * rng.random((MC_SAMPLES, d))
        vol = float(np.prod(hi - lo))
        g = integrand(p.logpdf(pts), q.logpdf(pts), pts)
        terms = g + math.log(vol) if log_space else g * vol
    if log_space:
        mx = np.max(terms)
        scaled = np.exp(terms - mx)
        mean = scaled.mean()
        se = scaled.std(ddof=1) / math.sqrt(MC_SAMPLES) / mean if mean > 0 else np.inf
        return DivergenceEstimate(float(mx + math.log(mean)), float(se), method, seed, name)
    return DivergenceEstimate(
        float(terms.mean()), float(terms.std(ddof=1) / math.sqrt(MC_SAMPLES)), method, seed, name
    )


# ---------------------------------------------------------------------------
# divergences


def _kl_integrand(lp, lq, pts):
    _check_continuity(lp, lq, pts)
    out = np.zeros_like(lp)
    m = np.isfinite(lp)
    out[m] = np.exp(lp[m]) * (lp[m] - lq[m])
    return out


def kl(p, q, method=None, seed=None, domain=None) -> DivergenceEstimate:
    """Relative entropy ``int p log(p / q)``."""
    return _estimate(_kl_integrand, p, q, method, seed, domain, "kl")


def tv(p, q, method=None, seed=None, domain=None) -> DivergenceEstimate:
    """``int |p - q|`` (unnormalized, so disjoint supports give 2)."""
    return _estimate(lambda lp, lq, _: np.abs(np.exp(lp) - np.exp(lq)), p, q, method, seed, domain, "tv")


def hellinger_sq(p, q, method=None, seed=None, domain=None) -> DivergenceEstimate:
    """``int (sqrt p - sqrt q)^2``."""
    return _estimate(
        lambda lp, lq, _: (np.exp(0.5 * lp) - np.exp(0.5 * lq)) ** 2, p, q, method, seed, domain, "hellinger_sq"
    )


def f_divergence(f: Callable, p, q, method=None, seed=None, domain=None, name="f") -> DivergenceEstimate:
    """``int q f(p / q)`` for convex ``f`` with ``f(1) = 0``.

    Where the ratio exceeds one the integrand is rewritten as ``p f(r) / r`` so
    that huge ratios are never multiplied by tiny reference values.
    """

    def integrand(lp, lq, pts):
        _check_continuity(lp, lq, pts)
        out = np.zeros_like(lp)
        m = np.isfinite(lq)
        lr = lp[m] - lq[m]
        r = np.exp(np.minimum(lr, 700.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            fr = np.asarray(f(np.maximum(r, 1e-300)), dtype=float)
        fr = np.broadcast_to(fr, r.shape)
        low = lr <= 0
        vals = np.where(low, np.exp(lq[m]) * fr, np.exp(lp[m]) * fr / r)
        out[m] = np.where(np.isfinite(vals), vals, 0.0)
        return out

    return _estimate(integrand, p, q, method, seed, domain, name)


def renyi(lam, p, q, method=None, seed=None, domain=None) -> DivergenceEstimate:
    """Order-``lam`` Renyi divergence ``log(int p^lam q^(1-lam)) / (lam - 1)``.

    Returns ``inf`` when doubling the integration box still changes the inner
    integral by more than 1%, which signals a divergent integral.
    """
    if lam < 0:
        raise ValueError("order must be nonnegative")
    if abs(lam - 1.0) < 1e-12:
        est = kl(p, q, method, seed, domain)
        return DivergenceEstimate(est.value, est.error_bar, est.method, seed, "renyi")

    def integrand(lp, lq, pts):
        if lam > 1:
            _check_continuity(lp, lq, pts)
        with np.errstate(invalid="ignore"):
            g = lam * lp + (1.0 - lam) * lq
        return np.where(np.isnan(g), -np.inf, g)

    defaulted = domain is None
    p, q, d, method, (lo, hi) = _resolve(p, q, method, seed, domain)
    est = _estimate(integrand, p, q, method, seed, (lo, hi), "renyi", log_space=True)
    if method == "quadrature" and lam > 1:
        c, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        wide = _estimate(integrand, p, q, method, seed, (c - 2 * half, c + 2 * half), "renyi", log_space=True)
        if abs(wide.value - est.value) > math.log(1.01) or not np.isfinite(wide.value):
            return DivergenceEstimate(math.inf, math.inf, method, seed, "renyi")
    scale = 1.0 / (lam - 1.0)
    bar = est.error_bar
    if method == "quadrature" and defaulted and lam < 1:
        # Holder: the mass cut off by the box is at most the tail of either density
        bar += DOMAIN_TAIL
    return DivergenceEstimate(scale * est.value, abs(scale) * bar, method, seed, "renyi")


# ---------------------------------------------------------------------------
# sup of the density ratio


def _log_ratio(p, q, pts):
    lp, lq = p.logpdf(pts), q.logpdf(pts)
    with np.errstate(invalid="ignore"):
        out = lp - lq
    out = np.where(np.isneginf(lp), -np.inf, out)
    return np.where(np.isneginf(lq) & np.isfinite(lp), np.inf, out)


def _directions(d, seed):
    if d == 1:
        return np.array([[1.0], [-1.0]])
    rng = quadrature.rng_from_seed(seed)
    v = rng.standard_normal((2**d * 64, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    eye = np.eye(d)
    return np.vstack([eye, -eye, v])


def log_sup_ratio(p, q, domain=None, seed=0, ray_doublings=15):
    """``log sup p/q`` by grid search, local refinement and a ray scan; ``inf`` if unbounded."""
    p, q = as_density(p), as_density(q)
    d = p.dim
    lo, hi = default_domain(p, q) if domain is None else (np.atleast_1d(np.asarray(v, float)) for v in domain)
    if d == 1:
        pts = np.linspace(lo, hi, 4097).reshape(-1, 1)
    elif d == 2:
        g = np.meshgrid(np.linspace(lo[0], hi[0], 257), np.linspace(lo[1], hi[1], 257), indexing="ij")
        pts = np.stack([g[0].ravel(), g[1].ravel()], axis=1)
    else:
        pts = lo + (hi - lo) * quadrature.rng_from_seed(seed).random((2**14, d))
    lr = _log_ratio(p, q, pts)
    if np.isposinf(lr).any():
        return math.inf
    best = float(np.max(lr))
    x0 = pts[int(np.argmax(lr))]
    res = optimize.minimize(
        lambda x: -float(_log_ratio(p, q, x.reshape(1, d))[0]), x0, method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-13, "maxiter": 400 * d},
    )
    if np.isfinite(res.fun):
        best = max(best, -float(res.fun))
    unit = float(np.max(np.maximum(np.abs(lo), np.abs(hi))))
    center = np.zeros(d)
    radii = unit * 2.0 ** np.arange(ray_doublings + 1)
    for v in _directions(d, seed):
        ray = center + radii[:, None] * v
        vals = _log_ratio(p, q, ray)
        if np.isposinf(vals).any():
            return math.inf
        finite = vals[np.isfinite(vals)]
        if finite.size:
            best = max(best, float(finite.max()))
        steps = np.diff(vals)
        run = 0
        for s in steps:
            run = run + 1 if (np.isfinite(s) and s > 1e-9) else 0
            if run >= 3:
                return math.inf
    return best


def sup_ratio(p, q, domain=None, seed=0):
    """``sup p / q``; ``inf`` signals a ratio growing without bound along some ray."""
    lr = log_sup_ratio(p, q, domain, seed)
    return math.inf if lr == math.inf else math.exp(lr)


# ---------------------------------------------------------------------------
# certificates


def reverse_pinsker_factor(S):
    """``log(S) / (1 - 1/S)``, equal to 1 at ``S = 1``."""
    u = math.log(S)
    if u == 0.0:
        return 1.0
    return u / -math.expm1(-u)


@dataclass(frozen=True)
class PinskerCertificate:
    kl: float
    tv: float
    sup_ratio: float
    kl_error: float
    tv_error: float
    pinsker_ok: bool
    pinsker_slack: float
    reverse_applicable: bool
    reverse_pinsker_ok: bool | None
    reverse_bound: float | None
    reverse_slack: float | None

    def to_dict(self):
        out = asdict(self)
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in out.items()}


def pinsker_certificates(mu2, mu1, method=None, seed=None, domain=None, n_bars=3.0, kl_est=None, tv_est=None,
                         ratio=None) -> PinskerCertificate:
    """Check ``TV <= sqrt(2 KL)`` and ``KL <= 0.5 log(S)/(1 - 1/S) TV`` with ``S = sup dmu2/dmu1``.

    Both sides are measured; each check allows ``n_bars`` combined error bars.
    Precomputed ``kl_est``/``tv_est``/``ratio`` may be supplied to avoid recomputation.
    """
    k = kl_est if kl_est is not None else kl(mu2, mu1, method, seed, domain)
    t = tv_est if tv_est is not None else tv(mu2, mu1, method, seed, domain)
    S = ratio if ratio is not None else sup_ratio(mu2, mu1, domain, seed or 0)
    kv, tvv = max(k.value, 0.0), t.value
    slack_p = math.sqrt(2.0 * kv) - tvv
    tol_p = n_bars * (t.error_bar + (math.sqrt(2.0 * kv + 2.0 * k.error_bar) - math.sqrt(2.0 * kv)))
    pinsker_ok = slack_p >= -tol_p
    if not math.isfinite(S):
        return PinskerCertificate(k.value, tvv, S, k.error_bar, t.error_bar, pinsker_ok, slack_p,
                                  False, None, None, None)
    factor = 0.5 * reverse_pinsker_factor(max(S, 1.0))
    bound = factor * tvv
    slack_r = bound - k.value
    tol_r = n_bars * (k.error_bar + factor * t.error_bar)
    return PinskerCertificate(k.value, tvv, S, k.error_bar, t.error_bar, pinsker_ok, slack_p,
                              True, slack_r >= -tol_r, bound, slack_r)
