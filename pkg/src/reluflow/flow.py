"""Exact flow maps of the ReLU field ``w (a.x + b)_+`` and closed-form density pushforwards.

On a segment with constant parameters the scalar ``s = a.x + b`` obeys
``ds/dt = c s`` with ``c = w.a`` while it is positive, and points with
``s <= 0`` do not move. Every trajectory therefore stays on its side of the
switching hyperplane, which gives the closed forms used throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ControlSchedule, GaussianPiece, HalfSpace, PiecewiseGaussianDensity
from .densities import as_points
from .errors import ComplexityError

NILPOTENT_TOL = 1e-12
PIECE_CAP = 2**20


@dataclass(frozen=True)
class FlowResult:
    """Image point(s) and ``log |det D Phi|`` of the map that produced them."""

    point: np.ndarray
    log_jacobian: np.ndarray | float


def _growth(w, a):
    """``c = w.a``, or ``None`` when it is numerically zero (nilpotent case)."""
    c = float(w @ a)
    if abs(c) <= NILPOTENT_TOL * np.linalg.norm(w) * np.linalg.norm(a):
        return None
    return c


def _phi(c, t):
    """``(e^{ct} - 1)/c``, continuous through ``c = 0``."""
    return t if c is None else float(np.expm1(c * t) / c)


def rank_one_exponential(w, a, t):
    """Matrix exponential ``exp(t w a^T)``."""
    w = np.atleast_1d(np.asarray(w, float))
    a = np.atleast_1d(np.asarray(a, float))
    return np.eye(w.shape[0]) + _phi(_growth(w, a), t) * np.outer(w, a)


def _active_segments(schedule, t):
    """Yield ``(segment, tau)`` for the part of the schedule inside ``[0, t]``."""
    for seg in schedule.segments:
        if seg.t_start >= t:
            break
        tau = min(t, seg.t_end) - seg.t_start
        if tau > 0 and not seg.is_idle:
            yield seg, tau


def _check_time(schedule, t):
    t = schedule.horizon if t is None else float(t)
    if t < 0 or t > schedule.horizon * (1 + 1e-12) + 1e-15:
        raise ValueError(f"t={t} outside [0, {schedule.horizon}]")
    return t


def segment_forward(pts, seg, tau):
    """Advance ``(N, d)`` points by ``tau`` under one segment; returns ``(points, log_jac)``."""
    s = pts @ seg.a + seg.b
    active = s > 0
    c = _growth(seg.w, seg.a)
    step = np.where(active, s * _phi(c, tau), 0.0)
    logjac = np.where(active, 0.0 if c is None else c * tau, 0.0)
    return pts + step[:, None] * seg.w, logjac


def segment_inverse(pts, seg, tau):
    s = pts @ seg.a + seg.b
    active = s > 0
    c = _growth(seg.w, seg.a)
    step = np.where(active, s * _phi(None if c is None else -c, tau), 0.0)
    logjac = np.where(active, 0.0 if c is None else -c * tau, 0.0)
    return pts - step[:, None] * seg.w, logjac


def _batch(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        return x, False
    return np.atleast_1d(x).reshape(1, d), True


def flow_forward(schedule: ControlSchedule, x0, t=None) -> FlowResult:
    """Position at time ``t`` of the trajectory started at ``x0``.

    ``x0`` may be a single point of length ``d`` or an ``(N, d)`` batch.
    """
    t = _check_time(schedule, t)
    pts, single = _batch(x0, schedule.dim)
    logjac = np.zeros(pts.shape[0])
    for seg, tau in _active_segments(schedule, t):
        pts, lj = segment_forward(pts, seg, tau)
        logjac += lj
    if single:
        return FlowResult(pts[0], float(logjac[0]))
    return FlowResult(pts, logjac)


def flow_inverse(schedule: ControlSchedule, y, t=None) -> FlowResult:
    """Starting point whose trajectory reaches ``y`` at time ``t``; Jacobian of the inverse map."""
    t = _check_time(schedule, t)
    pts, single = _batch(y, schedule.dim)
    logjac = np.zeros(pts.shape[0])
    for seg, tau in reversed(list(_active_segments(schedule, t))):
        pts, lj = segment_inverse(pts, seg, tau)
        logjac += lj
    if single:
        return FlowResult(pts[0], float(logjac[0]))
    return FlowResult(pts, logjac)


def _side_1d(iv, cut, right_active):
    """Which side of ``cut`` a 1D interval lies on, or ``"both"``."""
    lo, _, hi, _ = iv
    if right_active:
        return "inactive" if hi <= cut else "both"
    return "inactive" if lo >= cut else "both"


def _split_piece(piece, seg, tau, c):
    """Pieces of the solution after one segment that grew out of ``piece``."""
    a, b, w = seg.a, seg.b, seg.w
    translation = not np.any(a)
    if piece.region.dim == 1 and not translation:
        iv = piece.region.interval()
        cut = -b / a[0]
        side = _side_1d(iv, cut, a[0] > 0)
        if side == "inactive":
            return [piece]
    out = []
    if not translation:
        rest = piece.region.intersect(HalfSpace(a, b, False))
        if not rest.is_empty():
            out.append(GaussianPiece(piece.amplitude, piece.A, piece.shift, rest))
    k = _phi(None if c is None else -c, tau)
    M = np.eye(a.shape[0]) - k * np.outer(w, a)
    s = -k * b * w
    moved = piece.region.preimage(M, s)
    if not translation:
        moved = moved.intersect(HalfSpace(a, b, True))
    elif moved.dim == 1:
        moved = moved.simplified()
    if translation or not moved.is_empty():
        amp = piece.amplitude * (1.0 if c is None else np.exp(-c * tau))
        out.append(GaussianPiece(amp, piece.A @ M, piece.A @ s + piece.shift, moved))
    return out


def pushforward_density(
    initial: PiecewiseGaussianDensity, schedule: ControlSchedule, t=None, cap: int = PIECE_CAP
) -> PiecewiseGaussianDensity:
    """Exact solution of the continuity equation at time ``t`` (default: the horizon).

    Each segment splits every piece along its switching hyperplane; the active
    part is re-expressed through the inverse affine map and rescaled by
    ``exp(-c tau)``. Empty pieces are dropped.
    """
    t = _check_time(schedule, t)
    if schedule.dim != initial.dim:
        raise ValueError("schedule and density dimensions differ")
    pieces = list(initial.pieces)
    for seg, tau in _active_segments(schedule, t):
        c = _growth(seg.w, seg.a)
        nxt = []
        for piece in pieces:
            nxt.extend(_split_piece(piece, seg, tau, c))
            if len(nxt) > cap:
                raise ComplexityError(f"piece count exceeded cap {cap}", count=len(nxt))
        pieces = nxt
    return initial.with_pieces(pieces)


def log_density_at(initial, schedule: ControlSchedule, t, x):
    """``log rho(t, x)`` by pulling ``x`` back along the flow (change of variables)."""
    t = _check_time(schedule, t)
    pts, scalar = as_points(x, schedule.dim)
    back = flow_inverse(schedule, pts, t)
    out = np.asarray(initial.logpdf(back.point), dtype=float) + back.log_jacobian
    return float(out[0]) if scalar else out


def density_at(initial, schedule: ControlSchedule, t, x):
    """``rho(t, x)`` computed independently of :func:`pushforward_density`."""
    return np.exp(log_density_at(initial, schedule, t, x))
