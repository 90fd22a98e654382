"""Fixed-step RK4 with halving-based error control, batched over lanes.

The integrators accept right-hand sides f(t, y) where y has shape (n, d)
and return arrays of the same shape; scalar problems pass n = 1.
"""

from __future__ import annotations

import numpy as np


class BlowUp(Exception):
    """Trajectory left the guard box or became non-finite."""


class StiffnessAbort(Exception):
    """Step size underflowed while controlling the local error."""


def _rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4(f, y0, t0, t1, max_step, tol=1e-10, guard=None, min_step=1e-12):
    """Integrate from t0 to t1 (either direction).

    Each step is checked by comparing one full step against two half
    steps; the step halves until the discrepancy is below ``tol`` and the
    doubly-halved result (local extrapolation) is kept.  ``guard(y) ->
    bool lanes`` may flag escaping lanes, raising BlowUp.
    """
    y = np.array(y0, dtype=float)
    t = float(t0)
    direction = 1.0 if t1 >= t0 else -1.0
    span = abs(t1 - t0)
    if span == 0.0:
        return y
    h = min(max_step, span) * direction
    while (t1 - t) * direction > 1e-14 * max(1.0, span):
        if abs(h) > abs(t1 - t):
            h = t1 - t
        while True:
            with np.errstate(all="ignore"):
                full = _rk4_step(f, t, y, h)
                half = _rk4_step(f, t, y, 0.5 * h)
                half = _rk4_step(f, t + 0.5 * h, half, 0.5 * h)
            if np.all(np.isfinite(half)) and np.all(np.isfinite(full)):
                err = np.max(np.abs(full - half))
                scale = 1.0 + np.max(np.abs(half))
                if err <= tol * scale:
                    break
            else:
                err, scale = np.inf, 1.0  # stage left the domain; shrink
            h *= 0.5
            if abs(h) < min_step:
                raise StiffnessAbort(f"step underflow at t={t}")
        y = half + (half - full) / 15.0  # one Richardson extrapolation
        t += h
        if guard is not None:
            esc = guard(y)
            if np.any(esc):
                raise BlowUp(f"trajectory left the domain at t={t}")
        if err < 0.25 * tol * scale and abs(h) < max_step:
            h = direction * min(abs(h) * 2.0, max_step)
    return y


def rk4_dense(f, y0, t0, ts, max_step, tol=1e-10, guard=None):
    """Integrate through the sorted output times ``ts`` (monotone away
    from t0); returns an array of states of shape (len(ts),) + y0.shape."""
    out = np.empty((len(ts),) + np.shape(y0))
    y = np.array(y0, dtype=float)
    t = float(t0)
    for i, tnext in enumerate(ts):
        y = rk4(f, y, t, float(tnext), max_step, tol=tol, guard=guard)
        t = float(tnext)
        out[i] = y
    return out


def rk4_lanes(f, y0, dt, n_steps):
    """March all lanes n_steps of RK4 with per-lane step dt/n_steps.

    ``f(s, y)`` receives the per-lane pseudo-time s of shape (n,); used
    for batched flows whose lanes integrate over different spans.
    """
    y = np.array(y0, dtype=float)
    dt = np.asarray(dt, dtype=float)
    h = dt / n_steps
    s = np.zeros_like(dt)
    hcol = h[:, None] if y.ndim == 2 else h
    for _ in range(n_steps):
        k1 = f(s, y)
        k2 = f(s + 0.5 * h, y + 0.5 * hcol * k1)
        k3 = f(s + 0.5 * h, y + 0.5 * hcol * k2)
        k4 = f(s + h, y + hcol * k3)
        y = y + (hcol / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        s = s + h
    if not np.all(np.isfinite(y)):
        raise BlowUp("non-finite state in batched flow")
    return y
