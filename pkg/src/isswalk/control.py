"""Output-tracking controllers: exact feedback linearization and joint PD.

Both come in state-parameterized and time-parameterized variants; the
variant is decided by the ``OutputSpec`` phase mode (the controller just
forwards its clock reading).  The disturbance entering the stability
analysis is always measured against the state-based linearizing input:
``d = u_applied - u_io``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import RobotModel, State, dynamics_terms
from .errors import FLAG_TORQUE_SATURATED
from .outputs import OutputSpec, lie_derivatives, output_errors, phzd_reconstruct, zero_coords


@dataclass
class ControllerConfig:
    kind: str = "fblin"  # "fblin" | "pd"
    eps: float = 10.0  # linearizing gain
    kp: float = 400.0  # PD proportional gain (per actuated joint)
    kd: float = 40.0
    torque_limit: float | None = None


def saturate(u: np.ndarray, limit: float | None):
    """Clip torques to +-limit; returns (u_clipped, flags)."""
    if limit is None:
        return u, []
    uc = np.clip(u, -limit, limit)
    if np.any(uc != u):
        return uc, [FLAG_TORQUE_SATURATED]
    return u, []


def fblin(
    model: RobotModel,
    spec: OutputSpec,
    x: State,
    eps: float,
    t_or_none=None,
    y1_target=None,
    terms=None,
):
    """Exact linearizing input on the domain's active actuators.

    Closed loop: y1dot = -eps (y1 - y1*), y2ddot = -2 eps y2dot - eps^2 y2.
    Inactive actuator channels get zero torque.  Returns (u, flags).
    """
    ts, flags = output_errors(model, spec, x, t_or_none)
    ld = lie_derivatives(model, spec, x, t_or_none, terms=terms)
    e1 = ts.y1 if y1_target is None else ts.y1 - np.atleast_1d(y1_target)
    mu = np.concatenate([
        -eps * e1,
        -2.0 * eps * ts.y2dot - eps * eps * ts.y2,
    ])
    Lf = np.concatenate([ld.Lf_y1, ld.Lf2_y2])
    u_act = np.linalg.solve(ld.A_dec, mu - Lf)
    u = np.zeros(model.m)
    u[list(spec.active)] = u_act
    return u, flags


def pd(
    model: RobotModel,
    spec: OutputSpec,
    x: State,
    kp: float,
    kd: float,
    t_or_none=None,
    y1_target=None,
    warm_start: State | None = None,
):
    """Joint-space PD toward the reconstructed surface state.

    The desired configuration comes from inverting the output chart at the
    current zero coordinates (state mode) or at the clock phase (time mode).
    Returns (u, (q_d, qdot_d), flags).
    """
    y1_t = np.zeros(spec.k1) if y1_target is None else np.atleast_1d(y1_target)
    if spec.phase.mode == "state":
        z = zero_coords(model, spec, x, check=False)
        q_d, qd_d, flags = phzd_reconstruct(
            model, spec, y1_t, z, warm_start=warm_start or x
        )
    else:
        q_d, qd_d, flags = phzd_reconstruct(
            model, spec, y1_t, None, t_or_none, warm_start=warm_start or x
        )
    Bt = model.B.T
    u = np.zeros(model.m)
    err_q = Bt @ (x.q - q_d)
    err_v = Bt @ (x.qdot - qd_d)
    act = list(spec.active)
    u[act] = -kp * err_q[act] - kd * err_v[act]
    return u, (q_d, qd_d), flags


class FBLinController:
    """Callable controller wrapper used by the hybrid executor."""

    def __init__(self, eps: float, torque_limit: float | None = None):
        self.eps = float(eps)
        self.torque_limit = torque_limit

    def reset_domain(self, spec: OutputSpec, x_plus: State):
        pass

    def __call__(self, model, spec, x, t_dom, terms=None):
        u, flags = fblin(model, spec, x, self.eps, t_dom, terms=terms)
        u, sat = saturate(u, self.torque_limit)
        return u, flags + sat


class PDController:
    """Callable PD controller with a per-domain warm-started reconstruction."""

    def __init__(self, kp: float, kd: float, torque_limit: float | None = None):
        self.kp = float(kp)
        self.kd = float(kd)
        self.torque_limit = torque_limit
        self._warm: State | None = None

    def reset_domain(self, spec: OutputSpec, x_plus: State):
        self._warm = x_plus

    def __call__(self, model, spec, x, t_dom, terms=None):
        u, (q_d, qd_d), flags = pd(
            model, spec, x, self.kp, self.kd, t_dom, warm_start=self._warm
        )
        self._warm = State(q_d, qd_d)
        u, sat = saturate(u, self.torque_limit)
        return u, flags + sat


def deviation(
    model: RobotModel,
    spec_state: OutputSpec,
    x: State,
    u_applied: np.ndarray,
    eps: float,
    terms=None,
) -> np.ndarray:
    """Disturbance seen by the nominal loop: d = u_applied - u_io(x).

    ``spec_state`` must be the state-parameterized output spec; the deviation
    of a time-based controller therefore includes its phase-uncertainty
    component automatically.
    """
    u_io, _ = fblin(model, spec_state, x, eps, terms=terms)
    return np.asarray(u_applied, dtype=float) - u_io


def deviation_components(
    model: RobotModel,
    spec_state: OutputSpec,
    spec_time: OutputSpec,
    x: State,
    t_dom: float,
    kp: float,
    kd: float,
    eps: float,
    warm_start: State | None = None,
    terms=None,
):
    """Split the time-PD deviation into tracking and phase-uncertainty parts.

    Returns (d2, d3): d2 = u_pd_time - u_io_time isolates the PD tracking
    error against the clock-parameterized surface, and d3 = u_io_time - u_io
    is the cost of parameterizing by the clock instead of the state.  The
    total deviation of the time-PD loop is d2 + d3.
    """
    u_pd_t, _, _ = pd(model, spec_time, x, kp, kd, t_dom,
                      warm_start=warm_start)
    u_io_t, _ = fblin(model, spec_time, x, eps, t_dom, terms=terms)
    u_io, _ = fblin(model, spec_state, x, eps, terms=terms)
    return u_pd_t - u_io_t, u_io_t - u_io
