"""Reference integration of the ReLU ODE with an adaptive 8th-order Runge-Kutta scheme.

Used to cross-check the closed forms; the state is augmented with the running
log-Jacobian ``int div v dt``.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import solve_ivp

from .flow import FlowResult, _check_time


def _rhs(seg):
    w, a, b = seg.w, seg.a, seg.b
    div = float(w @ a)

    def f(_, z):
        s = z[:-1] @ a + b
        if s <= 0:
            return np.zeros_like(z)
        return np.concatenate([w * s, [div]])

    return f


def integrate_ode(schedule, x0, t=None, rtol=1e-12, atol=1e-12) -> FlowResult:
    """Integrate a single trajectory segment by segment with DOP853."""
    t = _check_time(schedule, t)
    z = np.concatenate([np.atleast_1d(np.asarray(x0, float)), [0.0]])
    for seg in schedule.segments:
        if seg.t_start >= t:
            break
        t1 = min(t, seg.t_end)
        if t1 <= seg.t_start or seg.is_idle:
            continue
        sol = solve_ivp(_rhs(seg), (seg.t_start, t1), z, method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(f"ODE oracle failed: {sol.message}")
        z = sol.y[:, -1]
    return FlowResult(z[:-1].copy(), float(z[-1]))


def integrate_ode_backward(schedule, y, t=None, rtol=1e-12, atol=1e-12) -> FlowResult:
    """Run the field backwards from ``y`` at time ``t`` to time 0."""
    t = _check_time(schedule, t)
    z = np.concatenate([np.atleast_1d(np.asarray(y, float)), [0.0]])
    for seg in reversed(schedule.segments):
        if seg.t_start >= t or seg.is_idle:
            continue
        t1 = min(t, seg.t_end)
        sol = solve_ivp(_rhs(seg), (t1, seg.t_start), z, method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise RuntimeError(f"ODE oracle failed: {sol.message}")
        z = sol.y[:, -1]
    return FlowResult(z[:-1].copy(), float(z[-1]))
