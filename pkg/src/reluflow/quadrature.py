"""Composite Gauss-Legendre quadrature on boxes and seeded Monte Carlo."""

from __future__ import annotations

import numpy as np
from scipy import special

GL_ORDER = 16
_NODES, _WEIGHTS = np.polynomial.legendre.leggauss(GL_ORDER)
MC_DEFAULT_SEED = 0


def rng_from_seed(seed):
    """Counter-based generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.Philox(key=int(seed)))


def panel_edges(lo, hi, n_panels, breakpoints=()):
    edges = np.linspace(lo, hi, int(n_panels) + 1)
    extra = [b for b in breakpoints if lo < b < hi]
    if extra:
        edges = np.union1d(edges, np.asarray(extra, dtype=float))
        tol = 1e-12 * max(1.0, hi - lo)
        keep = np.concatenate([[True], np.diff(edges) > tol])
        edges = edges[keep]
        edges[-1] = hi
    return edges


def gl_rule(edges, order=GL_ORDER):
    """Nodes and weights of the composite rule on consecutive ``edges``."""
    if order == GL_ORDER:
        nodes, weights = _NODES, _WEIGHTS
    else:
        nodes, weights = np.polynomial.legendre.leggauss(order)
    a = edges[:-1, None]
    half = 0.5 * np.diff(edges)[:, None]
    x = a + half * (nodes[None, :] + 1.0)
    w = half * weights[None, :]
    return x.ravel(), w.ravel()


def box_rule(lo, hi, n_panels, breakpoints=None, order=GL_ORDER):
    """Tensor-product rule on the box ``[lo, hi]``.

    ``breakpoints`` is an optional per-axis sequence of extra panel edges, used
    to align panels with known discontinuities.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    d = lo.shape[0]
    if breakpoints is None:
        breakpoints = [()] * d
    axes = [gl_rule(panel_edges(lo[k], hi[k], n_panels, breakpoints[k]), order) for k in range(d)]
    if d == 1:
        return axes[0][0][:, None], axes[0][1]
    grids = np.meshgrid(*[ax[0] for ax in axes], indexing="ij")
    wgrids = np.meshgrid(*[ax[1] for ax in axes], indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return points, weights


def integrate_box(f, lo, hi, n_panels=64, breakpoints=None, order=GL_ORDER):
    points, weights = box_rule(lo, hi, n_panels, breakpoints, order)
    return float(np.dot(weights, f(points)))


def log_integrate_box(logf, lo, hi, n_panels=64, breakpoints=None, order=GL_ORDER):
    """``log`` of the integral of ``exp(logf)``; stable for tiny or huge integrands."""
    points, weights = box_rule(lo, hi, n_panels, breakpoints, order)
    return float(special.logsumexp(logf(points), b=weights))


def integrate_box_mc(f, lo, hi, n_samples=2**16, seed=MC_DEFAULT_SEED):
    """Uniform Monte Carlo over a box; returns ``(estimate, standard_error)``."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    rng = rng_from_seed(seed)
    pts = lo + (hi - lo) * rng.random((n_samples, lo.shape[0]))
    vol = float(np.prod(hi - lo))
    vals = vol * f(pts)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_samples))


def integrate(f, lo, hi, d=None, n_panels=64, breakpoints=None, seed=MC_DEFAULT_SEED):
    """Quadrature in d <= 2, Monte Carlo with a declared seed beyond."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    if (d or lo.shape[0]) <= 2:
        return integrate_box(f, lo, hi, n_panels, breakpoints)
    return integrate_box_mc(f, lo, hi, seed=seed)[0]
