"""Adaptive embedded Runge-Kutta (Dormand-Prince 4/5) with guard location.

The domain driver accepts an optional per-step projection hook (used for
velocity-level constraint drift control) and locates the first downward
guard crossing by bisection on a cubic Hermite interpolant, then refines the
event state by re-integrating exactly to the candidate time so the returned
state carries full integration accuracy.
"""

from __future__ import annotations

import numpy as np

# Dormand-Prince coefficients
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_ERR = _B5 - _B4

STATUS_GUARD = "guard"
STATUS_MAX_DWELL = "max_dwell"
STATUS_BLOWUP = "blowup"

_BLOWUP_LIMIT = 1e6


def _step(f, t, x, h, k0):
    """One DOPRI step; returns (x5, err, k_last)."""
    k = [k0]
    for i in range(1, 7):
        xi = x + h * (np.stack(k, axis=1) @ _A[i])
        k.append(f(t + _C[i] * h, xi))
    K = np.stack(k, axis=1)
    x5 = x + h * (K @ _B5)
    err = h * (K @ _ERR)
    return x5, err, k[-1]


def _hermite(t0, x0, f0, t1, x1, f1, t):
    h = t1 - t0
    s = (t - t0) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * x0 + h10 * h * f0 + h01 * x1 + h11 * h * f1


class DomainResult:
    __slots__ = ("status", "t_end", "x_end", "sample_t", "sample_x", "n_rhs")

    def __init__(self, status, t_end, x_end, sample_t, sample_x, n_rhs):
        self.status = status
        self.t_end = t_end
        self.x_end = x_end
        self.sample_t = sample_t
        self.sample_x = sample_x
        self.n_rhs = n_rhs


def integrate_domain(
    f,
    x0: np.ndarray,
    t0: float,
    max_dwell: float,
    guard=None,
    *,
    rtol: float = 1e-9,
    atol: float = 1e-11,
    project=None,
    sample_dt: float | None = None,
    refractory: float = 1e-3,
    guard_tol: float = 1e-10,
    h_max: float = 0.01,
    arm_value: float = 0.0,
) -> DomainResult:
    """Integrate xdot = f(t, x) until guard down-crossing or max dwell.

    ``guard`` is a scalar function of (t, x); the transition fires when it
    crosses zero from above, checked only after ``refractory`` seconds of
    dwell.  With ``arm_value`` > 0 the guard is armed only once its value
    has exceeded that level (so a domain may start on or slightly below the
    guard surface without firing instantly).  ``project`` (if given) maps an accepted state back onto the
    constraint manifold.  Samples are recorded on a uniform ``sample_dt``
    grid via Hermite interpolation (always including t0 and the end state).
    """
    t, x = t0, np.asarray(x0, dtype=float).copy()
    if project is not None:
        x = project(x)
    k0 = f(t, x)
    n_rhs = 1
    t_final = t0 + max_dwell

    sample_t, sample_x = [t], [x.copy()]
    next_sample = t0 + sample_dt if sample_dt else np.inf

    # guard state at the last checked point (only valid past refractory)
    g_prev = None
    tg_prev = None
    xg_prev = None

    h = min(h_max, max_dwell / 10, 1e-3)
    scale_floor = atol

    def _finish(status, t_end, x_end):
        if not sample_t or sample_t[-1] < t_end - 1e-15:
            sample_t.append(t_end)
            sample_x.append(x_end.copy())
        return DomainResult(
            status, t_end, x_end, np.array(sample_t), np.array(sample_x), n_rhs
        )

    def _refine_event(t_lo, x_lo, k_lo, t_hi, x_hi, k_hi):
        """Bisection on the Hermite interpolant, then exact re-integration."""
        nonlocal n_rhs
        ta, tb = t_lo, t_hi
        ga = guard(ta, x_lo)
        t_mid, x_mid = tb, x_hi
        for _ in range(80):
            t_mid = 0.5 * (ta + tb)
            x_mid = _hermite(t_lo, x_lo, k_lo, t_hi, x_hi, k_hi, t_mid)
            g_mid = guard(t_mid, x_mid)
            if abs(g_mid) <= guard_tol or (tb - ta) < 1e-14:
                break
            if (ga > 0) == (g_mid > 0):
                ta, ga = t_mid, g_mid
            else:
                tb = t_mid
        # re-integrate exactly from (t_lo, x_lo) to t_mid, then polish the
        # crossing time against the true trajectory with a secant iteration
        def _run_to(tt):
            nonlocal n_rhs
            te, xe = t_lo, x_lo.copy()
            ke = k_lo
            hh = min(h_max, max(tt - te, 1e-15))
            while te < tt - 1e-15:
                hh = min(hh, tt - te)
                xn, err, _ = _step(f, te, xe, hh, ke)
                n_rhs += 6
                sc = scale_floor + rtol * np.maximum(np.abs(xe), np.abs(xn))
                en = np.sqrt(np.mean((err / sc) ** 2))
                if en <= 1.0:
                    te, xe = te + hh, xn
                    ke = f(te, xe)
                    n_rhs += 1
                hh *= min(5.0, max(0.2, 0.9 * (en + 1e-300) ** -0.2))
            return xe

        t_ev, x_ev = t_mid, _run_to(t_mid)
        g_ev = guard(t_ev, x_ev)
        t_a, g_a = t_lo, ga
        for _ in range(12):
            if abs(g_ev) <= guard_tol:
                break
            if abs(g_ev - g_a) < 1e-300:
                break
            t_new = t_ev - g_ev * (t_ev - t_a) / (g_ev - g_a)
            t_new = min(max(t_new, t_lo), t_hi)
            t_a, g_a = t_ev, g_ev
            t_ev = t_new
            x_ev = _run_to(t_ev)
            g_ev = guard(t_ev, x_ev)
        if project is not None:
            x_ev = project(x_ev)
        return t_ev, x_ev

    while t < t_final - 1e-15:
        h = min(h, t_final - t, h_max)
        x_new, err, _ = _step(f, t, x, h, k0)
        n_rhs += 6
        sc = scale_floor + rtol * np.maximum(np.abs(x), np.abs(x_new))
        errnorm = np.sqrt(np.mean((err / sc) ** 2))
        if errnorm > 1.0:
            h *= max(0.2, 0.9 * errnorm**-0.2)
            continue
        t_new = t + h
        if project is not None:
            x_new = project(x_new)
        if np.max(np.abs(x_new)) > _BLOWUP_LIMIT:
            return _finish(STATUS_BLOWUP, t_new, x_new)
        k_new = f(t_new, x_new)
        n_rhs += 1

        # dense samples within the step
        while next_sample <= t_new + 1e-15:
            ts = min(next_sample, t_new)
            sample_t.append(ts)
            sample_x.append(_hermite(t, x, k0, t_new, x_new, k_new, ts))
            next_sample += sample_dt

        if guard is not None and t_new >= t0 + refractory:
            g_new = guard(t_new, x_new)
            if g_prev is None:
                if g_new > arm_value:
                    g_prev, tg_prev, xg_prev, kg_prev = g_new, t_new, x_new, k_new
                elif arm_value == 0.0 and g_new <= 0.0:
                    # crossed during the refractory window; fire immediately
                    return _finish(STATUS_GUARD, t_new, x_new)
            elif g_prev > 0.0 and g_new <= 0.0:
                t_ev, x_ev = _refine_event(
                    tg_prev, xg_prev, kg_prev, t_new, x_new, k_new
                )
                # drop interpolated samples past the event
                while sample_t and sample_t[-1] > t_ev:
                    sample_t.pop()
                    sample_x.pop()
                return _finish(STATUS_GUARD, t_ev, x_ev)
            else:
                g_prev, tg_prev, xg_prev, kg_prev = g_new, t_new, x_new, k_new

        t, x, k0 = t_new, x_new, k_new
        h *= min(5.0, max(0.2, 0.9 * (errnorm + 1e-300) ** -0.2))

    return _finish(STATUS_MAX_DWELL, t, x)
