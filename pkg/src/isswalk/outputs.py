"""Virtual-constraint outputs and the transverse/zero coordinate machinery.

Outputs are linear forms on the configuration (pose outputs, relative degree
two) and on the velocity (relative degree one), with desired pose
trajectories given by Bezier polynomials in a gait-progress phase.  The
phase is either state-based (linearized hip position over desired speed) or
time-based (a stored phase-vs-time profile for the nominal orbit).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.interpolate import CubicSpline

from .dynamics import ConstraintSet, RobotModel, State, dynamics_terms
from .errors import ChartSingular, DecouplingSingular, FLAG_IK_DIVERGED, FLAG_PHASE_OUT_OF_RANGE

_DECOUPLING_COND_LIMIT = 1e10
_IK_DAMPING = 1e-6
_IK_TOL = 1e-10
_IK_MAX_ITER = 100


@dataclass
class PhaseSpec:
    """Gait-progress parameterization.

    State mode: tau = (p . q - tau0) / v_d, the linearized hip advance
    divided by the desired speed (units of seconds).  Time mode: tau is read
    off a stored nominal-orbit profile of tau vs. time-in-domain.
    """

    mode: str  # "state" | "time"
    p: np.ndarray  # linear form of the hip-advance coordinate
    v_d: float
    tau0: float = 0.0  # hip advance at domain entry
    profile_t: np.ndarray | None = None
    profile_tau: np.ndarray | None = None

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self._spline = None
        if self.mode == "time":
            if self.profile_t is None or self.profile_tau is None:
                raise ValueError("time phase requires a stored tau(t) profile")
            self._spline = CubicSpline(self.profile_t, self.profile_tau)

    def at_time(self, t_dom: float):
        """(tau, taudot, tauddot) at a domain-relative clock reading."""
        sp = self._spline
        t = float(np.clip(t_dom, sp.x[0], sp.x[-1]))
        return float(sp(t)), float(sp(t, 1)), float(sp(t, 2))


@dataclass
class TransverseState:
    y1: np.ndarray
    y2: np.ndarray
    y2dot: np.ndarray

    @property
    def eta(self) -> np.ndarray:
        return np.concatenate([self.y1, self.y2, self.y2dot])

    @property
    def eta2(self) -> np.ndarray:
        return np.concatenate([self.y2, self.y2dot])


@dataclass
class ZeroCoords:
    z: np.ndarray


@dataclass
class ZeroChart:
    """Frozen linear complement chart: z = Z^T (x - x_ref)."""

    Z: np.ndarray  # (2n, dim_z), orthonormal columns
    x_ref: np.ndarray

    @property
    def dim(self) -> int:
        return self.Z.shape[1]


@dataclass
class OutputSpec:
    """Per-domain output definitions: y1 = V1 qdot - c1, y2 = V2 q - y2d(tau)."""

    domain: str
    V1: np.ndarray
    c1: np.ndarray
    V2: np.ndarray
    alpha: np.ndarray  # (k2, degree+1) Bezier coefficients
    phase: PhaseSpec
    phase_range: float  # tau at nominal domain exit (Bezier normalization)
    constraints: ConstraintSet
    active: tuple[int, ...]  # active actuator columns of B in this domain
    chart: ZeroChart | None = None

    def __post_init__(self):
        self.V1 = np.atleast_2d(np.asarray(self.V1, dtype=float))
        self.c1 = np.atleast_1d(np.asarray(self.c1, dtype=float))
        self.V2 = np.atleast_2d(np.asarray(self.V2, dtype=float))
        self.alpha = np.atleast_2d(np.asarray(self.alpha, dtype=float))
        if self.alpha.shape[1] - 1 < 3:
            raise ValueError("Bezier degree must be >= 3")
        if self.k1 + self.k2 != len(self.active):
            raise ValueError("k1 + k2 must equal the active actuator count")

    @property
    def k1(self) -> int:
        return self.V1.shape[0]

    @property
    def k2(self) -> int:
        return self.V2.shape[0]


# -- Bezier ------------------------------------------------------------------


def _bernstein(deg: int, s: float) -> np.ndarray:
    i = np.arange(deg + 1)
    return np.array([comb(deg, k) for k in i]) * s**i * (1.0 - s) ** (deg - i)


def _bezier_block(alpha: np.ndarray, s: float):
    """(value, d/ds, d2/ds2) of each row's Bezier curve at s, with endpoint
    extrapolation (frozen first derivative) outside [0, 1]."""
    deg = alpha.shape[1] - 1
    d1c = deg * np.diff(alpha, axis=1)
    d2c = (deg - 1) * np.diff(d1c, axis=1)
    if s < 0.0 or s > 1.0:
        se = 0.0 if s < 0.0 else 1.0
        v = alpha @ _bernstein(deg, se)
        d1 = d1c @ _bernstein(deg - 1, se)
        return v + (s - se) * d1, d1, np.zeros(alpha.shape[0])
    v = alpha @ _bernstein(deg, s)
    d1 = d1c @ _bernstein(deg - 1, s)
    d2 = d2c @ _bernstein(deg - 2, s)
    return v, d1, d2


def bezier_eval(alpha_row: np.ndarray, tau: float):
    """Scalar Bezier evaluation: (value, d/dtau, d2/dtau2) at tau in [0, 1]."""
    v, d1, d2 = _bezier_block(np.atleast_2d(alpha_row), float(tau))
    return float(v[0]), float(d1[0]), float(d2[0])


# -- phase and desired trajectories -------------------------------------------


def phase_state(spec: OutputSpec, q: np.ndarray) -> float:
    """Raw state-based phase: hip advance since domain entry over v_d."""
    ph = spec.phase
    return float((ph.p @ q - ph.tau0) / ph.v_d)


def phase_rate(spec: OutputSpec, qdot: np.ndarray) -> float:
    ph = spec.phase
    return float(ph.p @ qdot / ph.v_d)


def desired_outputs(spec: OutputSpec, tau: float):
    """(y2d, dy2d/dtau, d2y2d/dtau2) at raw phase tau; normalizes to the
    domain's phase range internally."""
    R = spec.phase_range
    s = tau / R
    v, d1, d2 = _bezier_block(spec.alpha, s)
    return v, d1 / R, d2 / (R * R)


def _phase_eval(spec: OutputSpec, q, qdot, t_or_none):
    """tau, taudot, tauddot-feedforward for the active phase mode."""
    if spec.phase.mode == "state":
        return phase_state(spec, q), phase_rate(spec, qdot), None
    if t_or_none is None:
        raise ValueError("time-based spec requires a domain-relative time")
    return spec.phase.at_time(float(t_or_none))


def output_errors(model: RobotModel, spec: OutputSpec, x: State, t_or_none=None):
    """Transverse coordinates eta = (y1, y2, y2dot) at a state.

    Returns (TransverseState, flags); flags holds PhaseOutOfRange when the
    normalized phase leaves [-0.1, 1.1].
    """
    q, qd = x.q, x.qdot
    tau, taudot, _ = _phase_eval(spec, q, qd, t_or_none)
    y2d, dy2d, _ = desired_outputs(spec, tau)
    y1 = spec.V1 @ qd - spec.c1
    y2 = spec.V2 @ q - y2d
    y2dot = spec.V2 @ qd - dy2d * taudot
    flags = []
    s = tau / spec.phase_range
    if s < -0.1 or s > 1.1:
        flags.append(FLAG_PHASE_OUT_OF_RANGE)
    return TransverseState(y1, y2, y2dot), flags


class LieDerivatives:
    __slots__ = ("Lf_y1", "Lg_y1", "Lf_y2", "Lf2_y2", "LgLf_y2", "A_dec", "cond")


def lie_derivatives(
    model: RobotModel,
    spec: OutputSpec,
    x: State,
    t_or_none=None,
    terms=None,
) -> LieDerivatives:
    """First/second Lie derivatives of the outputs along the constrained
    field, plus the stacked decoupling matrix restricted to the domain's
    active actuators."""
    q, qd = x.q, x.qdot
    if terms is None:
        terms = dynamics_terms(model, q, qd, spec.constraints)
    a_f, a_g = terms.a_f, terms.a_g[:, list(spec.active)]
    tau, taudot, tauddot = _phase_eval(spec, q, qd, t_or_none)
    _, dy2d, d2y2d = desired_outputs(spec, tau)
    ld = LieDerivatives()
    ld.Lf_y1 = spec.V1 @ a_f
    ld.Lg_y1 = spec.V1 @ a_g
    if spec.phase.mode == "state":
        V2eff = spec.V2 - np.outer(dy2d, spec.phase.p) / spec.phase.v_d
        ld.Lf_y2 = V2eff @ qd
        ld.Lf2_y2 = V2eff @ a_f - d2y2d * taudot**2
        ld.LgLf_y2 = V2eff @ a_g
    else:
        ld.Lf_y2 = spec.V2 @ qd - dy2d * taudot
        ld.Lf2_y2 = spec.V2 @ a_f - (d2y2d * taudot**2 + dy2d * tauddot)
        ld.LgLf_y2 = spec.V2 @ a_g
    ld.A_dec = np.vstack([ld.Lg_y1, ld.LgLf_y2])
    ld.cond = float(np.linalg.cond(ld.A_dec))
    if ld.cond > _DECOUPLING_COND_LIMIT:
        raise DecouplingSingular(
            f"decoupling matrix condition {ld.cond:.3g} in domain {spec.domain}"
        )
    return ld


# -- charts and reconstruction -------------------------------------------------


def eta_jacobian(model: RobotModel, spec: OutputSpec, x: State, t_or_none=None):
    """Analytic d(eta)/dx, (k1 + 2 k2) x 2n."""
    n = model.n
    q, qd = x.q, x.qdot
    tau, taudot, _ = _phase_eval(spec, q, qd, t_or_none)
    _, dy2d, d2y2d = desired_outputs(spec, tau)
    k1, k2 = spec.k1, spec.k2
    Jeta = np.zeros((k1 + 2 * k2, 2 * n))
    Jeta[:k1, n:] = spec.V1
    if spec.phase.mode == "state":
        pv = spec.phase.p / spec.phase.v_d
        V2eff = spec.V2 - np.outer(dy2d, pv)
        Jeta[k1:k1 + k2, :n] = V2eff
        Jeta[k1 + k2:, :n] = -np.outer(d2y2d, pv) * taudot
        Jeta[k1 + k2:, n:] = V2eff
    else:
        Jeta[k1:k1 + k2, :n] = spec.V2
        Jeta[k1 + k2:, n:] = spec.V2
    return Jeta


def _constraint_rows(model: RobotModel, spec: OutputSpec, x: State):
    """Position and velocity constraint residuals and their x-Jacobian."""
    from .dynamics import constraint_jacobian

    cs = spec.constraints
    n = model.n
    n_h = cs.n_rows
    res = np.zeros(2 * n_h)
    Jc = np.zeros((2 * n_h, 2 * n))
    if n_h == 0:
        return res, Jc
    J, Jd = constraint_jacobian(model, x.q, x.qdot, cs)
    row = 0
    for name, dirs in cs.frames:
        pos = model.frame_position(x.q, name)
        ref = _frame_anchor(spec, name)
        for dr in dirs:
            if dr == "x":
                res[row] = pos[0] - ref[0]
            elif dr == "z":
                res[row] = pos[1] - ref[1]
            else:  # pitch rows anchor at zero
                res[row] = model.W[model.contact_frames[name][0]] @ x.q
            row += 1
    res[n_h:] = J @ x.qdot
    Jc[:n_h, :n] = J
    Jc[n_h:, :n] = Jd
    Jc[n_h:, n:] = J
    return res, Jc


def _frame_anchor(spec: OutputSpec, name: str) -> np.ndarray:
    anchors = getattr(spec, "_anchors", None)
    if anchors is None or name not in anchors:
        return np.zeros(2)
    return anchors[name]


def set_frame_anchors(spec: OutputSpec, anchors: dict[str, np.ndarray]):
    """Pin the world positions of the domain's contact frames (used by the
    reconstruction solver; runtime dynamics never needs them)."""
    spec._anchors = {k: np.asarray(v, dtype=float) for k, v in anchors.items()}


def build_zero_chart(model: RobotModel, spec: OutputSpec, x_ref: State) -> ZeroChart:
    """Orthonormal complement of the output + constraint rows at x_ref.

    Frozen per domain; z = Z^T (x - x_ref) then completes (eta, z) to a local
    chart of the constrained state manifold.
    """
    Jeta = eta_jacobian(model, spec, x_ref)
    _, Jc = _constraint_rows(model, spec, x_ref)
    rows = np.vstack([Jeta, Jc])
    # QR of rows^T: trailing columns of Q span the orthogonal complement
    Qfull, _ = np.linalg.qr(rows.T, mode="complete")
    r = np.linalg.matrix_rank(rows)
    Z = Qfull[:, r:]
    return ZeroChart(Z=Z, x_ref=x_ref.x.copy())


def phi_jacobian(model: RobotModel, spec: OutputSpec, x: State):
    """Jacobian of the extended chart (eta, z, constraints) at x."""
    Jeta = eta_jacobian(model, spec, x)
    _, Jc = _constraint_rows(model, spec, x)
    return np.vstack([Jeta, spec.chart.Z.T, Jc])


def zero_coords(model: RobotModel, spec: OutputSpec, x: State, check: bool = True) -> ZeroCoords:
    """Zero-dynamics coordinates in the domain's frozen chart."""
    if spec.chart is None:
        raise ChartSingular(f"domain {spec.domain} has no zero chart")
    if check:
        Jphi = phi_jacobian(model, spec, x)
        sv = np.linalg.svd(Jphi, compute_uv=False)
        if sv[-1] < 1e-10 * sv[0]:
            raise ChartSingular(
                f"chart Jacobian rank-deficient in domain {spec.domain}"
            )
    z = spec.chart.Z.T @ (x.x - spec.chart.x_ref)
    return ZeroCoords(z=z)


def phzd_reconstruct(
    model: RobotModel,
    spec: OutputSpec,
    y1_target: np.ndarray,
    z_or_phase,
    t_or_none=None,
    warm_start: State | None = None,
):
    """Desired state on the partial zero dynamics surface.

    State mode inverts the full chart: solves eta = (y1_target, 0, 0),
    z = z_or_phase, constraints = 0 by damped-pseudoinverse Newton from the
    warm start.  Time mode pins the phase at tau(t) instead of z.

    Returns (q_d, qdot_d, flags); flags holds IkDiverged when the iteration
    hits the cap (the best iterate is still returned).
    """
    y1_target = np.atleast_1d(np.asarray(y1_target, dtype=float))
    n = model.n
    if warm_start is None:
        warm_start = State(np.zeros(n), np.zeros(n))
    xk = warm_start.x.copy()
    time_mode = spec.phase.mode == "time"
    if time_mode:
        tau_t, taudot_t, _ = spec.phase.at_time(float(t_or_none))
    else:
        z_t = np.asarray(
            z_or_phase.z if isinstance(z_or_phase, ZeroCoords) else z_or_phase,
            dtype=float,
        )

    best, best_norm = xk.copy(), np.inf
    flags: list[str] = []
    for it in range(_IK_MAX_ITER + 1):
        st = State(xk[:n], xk[n:])
        ts, _ = output_errors(model, spec, st, t_or_none)
        cres, Jc = _constraint_rows(model, spec, st)
        Jeta = eta_jacobian(model, spec, st, t_or_none)
        if time_mode:
            pv = spec.phase.p / spec.phase.v_d
            tau_q = (spec.phase.p @ st.q - spec.phase.tau0) / spec.phase.v_d
            F = np.concatenate([
                ts.y1 - y1_target,
                ts.y2,
                ts.y2dot,
                [tau_q - tau_t, pv @ st.qdot - taudot_t],
                cres,
            ])
            Jph = np.zeros((2, 2 * n))
            Jph[0, :n] = pv
            Jph[1, n:] = pv
            Jmat = np.vstack([Jeta, Jph, Jc])
        else:
            F = np.concatenate([
                ts.y1 - y1_target,
                ts.y2,
                ts.y2dot,
                spec.chart.Z.T @ (xk - spec.chart.x_ref) - z_t,
                cres,
            ])
            Jmat = np.vstack([Jeta, spec.chart.Z.T, Jc])
        fn = float(np.linalg.norm(F))
        if fn < best_norm:
            best_norm, best = fn, xk.copy()
        if fn <= _IK_TOL:
            break
        if it == _IK_MAX_ITER:
            flags.append(FLAG_IK_DIVERGED)
            break
        # damped pseudoinverse step
        JJt = Jmat @ Jmat.T
        JJt[np.diag_indices_from(JJt)] += _IK_DAMPING**2
        xk = xk - Jmat.T @ np.linalg.solve(JJt, F)
    xk = best
    return xk[:n], xk[n:], flags
