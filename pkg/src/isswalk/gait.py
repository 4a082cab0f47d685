"""Gait artifacts: the fitted periodic walking gait and its fitting routine.

A gait is defined by per-domain Bezier coefficient matrices, the output
structure constants, and the fixed point on the touchdown guard section.
``gait_fit`` polishes interior Bezier coefficients and the double-support
entry state for closed-loop periodicity under exact feedback linearization;
entry boundary coefficients are pinned from the actual domain-entry state,
which enforces the hybrid-invariance conditions by construction.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .control import FBLinController
from .dynamics import State, constraint_jacobian
from .errors import FitFailed
from .hybrid import DS, SS, HybridSystem, reset, step_integrate
from .integrate import STATUS_GUARD
from .outputs import (
    OutputSpec,
    PhaseSpec,
    ZeroChart,
    build_zero_chart,
    output_errors,
    set_frame_anchors,
)
from .walker import CS_DS, CS_SS, hip_advance_form, make_walker


@dataclass
class GaitStructure:
    """Output structure constants shared by the seed and the artifact."""

    v_d: float = 0.60          # desired hip speed (m/s)
    step_length: float = 0.30
    phase_range_ds: float = 0.10
    phase_range_ss: float = 0.40
    degree: int = 5
    eps: float = 20.0          # linearizing gain used during fitting
    active_ds: tuple = (0, 1, 2)
    active_ss: tuple = (0, 1, 2, 3)


def output_matrices(model, structure: GaitStructure):
    """(V1_ds, c1_ds, V2_ds, V1_ss, c1_ss, V2_ss, p) linear forms."""
    n = model.n
    p = hip_advance_form(model)
    V1_ds = p.reshape(1, -1)
    c1_ds = np.array([structure.v_d])
    V2_ds = np.zeros((2, n))
    V2_ds[0, 1] = 1.0  # hip height
    V2_ds[1, 2] = 1.0  # torso pitch
    V1_ss = np.zeros((0, n))
    c1_ss = np.zeros(0)
    V2_ss = np.zeros((4, n))
    V2_ss[0, 1] = 1.0
    V2_ss[1, 2] = 1.0
    V2_ss[2, model.angle_index("thigh_r")] = 1.0
    V2_ss[3, model.angle_index("calf_r")] = 1.0
    return V1_ds, c1_ds, V2_ds, V1_ss, c1_ss, V2_ss, p


def make_spec(model, domain: str, alpha: np.ndarray, structure: GaitStructure,
              mode: str = "state", profile=None, chart: ZeroChart | None = None):
    V1_ds, c1_ds, V2_ds, V1_ss, c1_ss, V2_ss, p = output_matrices(model, structure)
    kw = {}
    if mode == "time":
        kw = {"profile_t": profile[0], "profile_tau": profile[1]}
    phase = PhaseSpec(mode=mode, p=p, v_d=structure.v_d, **kw)
    if domain == DS:
        return OutputSpec(
            domain=DS, V1=V1_ds, c1=c1_ds, V2=V2_ds, alpha=alpha, phase=phase,
            phase_range=structure.phase_range_ds, constraints=CS_DS,
            active=tuple(structure.active_ds), chart=chart,
        )
    return OutputSpec(
        domain=SS, V1=V1_ss, c1=c1_ss, V2=V2_ss, alpha=alpha, phase=phase,
        phase_range=structure.phase_range_ss, constraints=CS_SS,
        active=tuple(structure.active_ss), chart=chart,
    )


def pin_entry(alpha: np.ndarray, y2_entry, y2dot_entry, taudot_entry,
              phase_range: float) -> np.ndarray:
    """Pin the first two Bezier columns so y2 = y2dot = 0 at domain entry."""
    deg = alpha.shape[1] - 1
    a = alpha.copy()
    a[:, 0] = y2_entry
    a[:, 1] = a[:, 0] + np.asarray(y2dot_entry) * phase_range / (
        deg * max(taudot_entry, 1e-6))
    return a


def ds_entry_state(model, params, structure: GaitStructure) -> State:
    """Full ds-entry state from 6 free parameters (base pose and rates).

    The lead foot sits at the origin and the trailing foot one step length
    behind; leg angles follow from two-link inverse kinematics.
    """
    hx, hz, th, vx, vz, om = params
    L = structure.step_length

    def leg(hip, foot):
        dx, dz = foot[0] - hip[0], foot[1] - hip[1]
        r = min(np.hypot(dx, dz), 0.799)
        phi = np.arctan2(dx, -dz)
        gam = np.arccos(r / 0.8)
        return phi + gam, phi - gam

    th_l, ca_l = leg((hx, hz), (0.0, 0.0))
    th_r, ca_r = leg((hx, hz), (-L, 0.0))
    q = np.array([hx, hz, th, th_l - th, th_r - th, ca_l - th_l, ca_r - th_r])
    J, _ = constraint_jacobian(model, q, np.zeros(model.n), CS_DS)
    A = np.vstack([J, np.eye(3, model.n)])
    qd = np.linalg.solve(A, np.concatenate([np.zeros(4), [vx, vz, om]]))
    return State(q, qd)


def rollout_step(model, x_ds: State, alpha_ds, alpha_ss,
                 structure: GaitStructure, rtol=1e-9, sample_dt=None):
    """One closed-loop step with entry-pinned Beziers.

    Returns (x_next_ds_entry or None, info dict).
    """
    hs = HybridSystem(
        model,
        {DS: make_spec(model, DS, alpha_ds, structure),
         SS: make_spec(model, SS, alpha_ss, structure)},
        rtol=rtol, atol=rtol * 1e-2, max_dwell=1.0,
    )
    ctrl = FBLinController(structure.eps)
    p = hip_advance_form(model)
    info = {"ok": False}

    x, t, dom = x_ds, 0.0, DS
    for leg_i in range(2):
        spec0 = hs.specs[dom]
        spec = hs.enter_domain(dom, x)
        taudot0 = float(p @ x.qdot / structure.v_d)
        a = pin_entry(
            spec0.alpha, spec0.V2 @ x.q, spec0.V2 @ x.qdot, taudot0,
            spec0.phase_range,
        )
        spec = dataclasses.replace(spec, alpha=a)
        set_frame_anchors(spec, {nm: model.frame_position(x.q, nm)
                                 for nm, _ in spec.constraints.frames})
        res, _ = step_integrate(hs, dom, x, ctrl, t, sample_dt=sample_dt,
                                spec=spec)
        info[f"{dom}_status"] = res.status
        info[f"{dom}_dwell"] = res.t_end - t
        info[f"alpha_{dom}_pinned"] = a
        info[f"{dom}_samples"] = (res.sample_t, res.sample_x)
        if res.status != STATUS_GUARD:
            return None, info
        x_minus = State(res.x_end[:model.n], res.x_end[model.n:])
        info[f"x_{dom}_exit"] = x_minus
        nxt, x_plus, impulse, fl = reset(hs, dom, x_minus)
        info[f"{dom}_impulse"] = impulse
        info.setdefault("flags", []).extend(fl)
        x, t, dom = x_plus, res.t_end, nxt
    info["ok"] = True
    info["T"] = t
    info["x_next"] = x
    return x, info


@dataclass
class GaitArtifact:
    """Fitted gait: Bezier matrices, structure, fixed point, certificates."""

    structure: GaitStructure
    alpha_ds: np.ndarray
    alpha_ss: np.ndarray
    entry_params: np.ndarray        # 6 free ds-entry parameters
    x_star_guard: np.ndarray        # fixed point on touchdown guard (2n,)
    x_ds_entry: np.ndarray          # post-reset ds entry state (2n,)
    T_ds: float
    T_ss: float
    invariance_residual: float
    fixed_point_residual: float
    spectral_radius: float | None = None
    tau_profile_ds: tuple | None = None   # (t grid, tau values)
    tau_profile_ss: tuple | None = None
    chart_ds: tuple | None = None         # (Z, x_ref)
    chart_ss: tuple | None = None

    def save(self, path):
        def arr(a):
            return np.asarray(a).tolist()
        data = {
            "schema_version": 1,
            "structure": dataclasses.asdict(self.structure),
            "alpha_ds": arr(self.alpha_ds),
            "alpha_ss": arr(self.alpha_ss),
            "entry_params": arr(self.entry_params),
            "x_star_guard": arr(self.x_star_guard),
            "x_ds_entry": arr(self.x_ds_entry),
            "T_ds": self.T_ds,
            "T_ss": self.T_ss,
            "invariance_residual": self.invariance_residual,
            "fixed_point_residual": self.fixed_point_residual,
            "spectral_radius": self.spectral_radius,
            "tau_profile_ds": [arr(v) for v in self.tau_profile_ds]
            if self.tau_profile_ds else None,
            "tau_profile_ss": [arr(v) for v in self.tau_profile_ss]
            if self.tau_profile_ss else None,
            "chart_ds": [arr(v) for v in self.chart_ds]
            if self.chart_ds else None,
            "chart_ss": [arr(v) for v in self.chart_ss]
            if self.chart_ss else None,
        }
        with open(path, "w") as f:
            json.dump(data, f, sort_keys=True, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            data = json.load(f)
        st = GaitStructure(**{
            k: tuple(v) if isinstance(v, list) else v
            for k, v in data["structure"].items()
        })
        def pair(v):
            return (np.array(v[0]), np.array(v[1])) if v else None
        return cls(
            structure=st,
            alpha_ds=np.array(data["alpha_ds"]),
            alpha_ss=np.array(data["alpha_ss"]),
            entry_params=np.array(data["entry_params"]),
            x_star_guard=np.array(data["x_star_guard"]),
            x_ds_entry=np.array(data["x_ds_entry"]),
            T_ds=data["T_ds"], T_ss=data["T_ss"],
            invariance_residual=data["invariance_residual"],
            fixed_point_residual=data["fixed_point_residual"],
            spectral_radius=data["spectral_radius"],
            tau_profile_ds=pair(data["tau_profile_ds"]),
            tau_profile_ss=pair(data["tau_profile_ss"]),
            chart_ds=pair(data["chart_ds"]),
            chart_ss=pair(data["chart_ss"]),
        )


def build_hybrid_system(artifact: GaitArtifact, model=None,
                        mode: str = "state", **hs_kwargs) -> HybridSystem:
    """HybridSystem with the artifact's baked (entry-pinned) output specs."""
    if model is None:
        model = make_walker()
    st = artifact.structure
    charts = {}
    for dom, ch in ((DS, artifact.chart_ds), (SS, artifact.chart_ss)):
        charts[dom] = ZeroChart(Z=np.array(ch[0]), x_ref=np.array(ch[1])) \
            if ch else None
    profs = {DS: artifact.tau_profile_ds, SS: artifact.tau_profile_ss}
    specs = {}
    for dom, alpha in ((DS, artifact.alpha_ds), (SS, artifact.alpha_ss)):
        specs[dom] = make_spec(
            model, dom, alpha, st, mode=mode,
            profile=profs[dom] if mode == "time" else None,
            chart=charts[dom],
        )
    return HybridSystem(model, specs, **hs_kwargs)


# -- fitting -------------------------------------------------------------------


def _pack(params, a_ds, a_ss):
    return np.concatenate([params, a_ds[:, 2:].ravel(), a_ss[:, 2:].ravel()])


def _unpack(theta, a_ds0, a_ss0):
    params = theta[:6]
    nds = a_ds0[:, 2:].size
    a_ds = a_ds0.copy()
    a_ds[:, 2:] = theta[6:6 + nds].reshape(a_ds0[:, 2:].shape)
    a_ss = a_ss0.copy()
    a_ss[:, 2:] = theta[6 + nds:].reshape(a_ss0[:, 2:].shape)
    return params, a_ds, a_ss


def _residuals(theta, model, a_ds0, a_ss0, theta0, structure, rtol, w_reg):
    params, a_ds, a_ss = _unpack(theta, a_ds0, a_ss0)
    x0 = ds_entry_state(model, params, structure)
    reg = w_reg * (theta - theta0)
    try:
        x1, info = rollout_step(model, x0, a_ds, a_ss, structure, rtol=rtol)
    except Exception:
        x1, info = None, {}
    if x1 is None:
        return np.concatenate([np.full(20, 30.0), reg])
    r_per = np.concatenate([x1.q - x0.q, x1.qdot - x0.qdot])
    imp = info["ss_impulse"]
    step_x = model.frame_position(info["x_ss_exit"].q, "foot_r")[0]
    pen = np.array([
        2.0 * max(0.0, abs(imp[1]) - 0.3),   # trailing impulse stays small
        2.0 * max(0.0, 0.5 - imp[3]),        # landing impulse positive
        0.5 * max(0.0, info["ds_dwell"] - structure.phase_range_ds),
        0.5 * max(0.0, info["ss_dwell"] - structure.phase_range_ss),
        0.5 * (step_x - structure.step_length),
        # hybrid invariance of the velocity output: entry hip speed = v_d
        2.0 * (x1.qdot[0] - structure.v_d),
    ])
    return np.concatenate([r_per, pen, reg])


def gait_fit(
    model,
    seed_params: np.ndarray,
    seed_alpha_ds: np.ndarray,
    seed_alpha_ss: np.ndarray,
    structure: GaitStructure | None = None,
    rtol: float = 1e-8,
    max_nfev: int = 400,
    w_reg: float = 3e-3,
    periodicity_tol: float = 1e-6,
    with_fixed_point: bool = True,
    verbose: int = 0,
) -> GaitArtifact:
    """Fit a periodic gait from a seed and assemble the full artifact.

    Polishes interior Bezier coefficients plus the ds-entry state so one
    closed-loop step returns to its start; then sharpens the fixed point by
    Newton on the Poincare map, bakes the entry-pinned Bezier columns, and
    records dwell times, phase profiles, zero charts, and residuals.
    """
    structure = structure or GaitStructure()
    theta0 = _pack(np.asarray(seed_params, float), seed_alpha_ds, seed_alpha_ss)
    sol = least_squares(
        _residuals, theta0,
        args=(model, seed_alpha_ds, seed_alpha_ss, theta0, structure, rtol,
              w_reg),
        method="trf", diff_step=1e-5, max_nfev=max_nfev, x_scale="jac",
        verbose=verbose,
    )
    params, a_ds, a_ss = _unpack(sol.x, seed_alpha_ds, seed_alpha_ss)
    x0 = ds_entry_state(model, params, structure)
    x1, info = rollout_step(model, x0, a_ds, a_ss, structure, rtol=1e-9)
    if x1 is None:
        raise FitFailed(f"fitted gait does not complete a step: {info}")
    gap = float(np.max(np.abs(np.concatenate(
        [x1.q - x0.q, x1.qdot - x0.qdot]))))
    if gap > 1e-3:
        raise FitFailed(f"periodicity gap {gap:.3g} after fit")

    # bake the entry-pinned Bezier columns at the (near-)fixed point
    a_ds = info["alpha_ds_pinned"]
    a_ss = info["alpha_ss_pinned"]

    # sharpen the fixed point on the touchdown guard section, alternating
    # with re-baking the entry-pinned columns until both are self-consistent
    from .analysis import find_fixed_point

    ctrl = FBLinController(structure.eps)
    x_guard = info["x_ss_exit"]
    fp_res = gap
    for _ in range(6):
        hs = build_hybrid_system(
            GaitArtifact(
                structure=structure, alpha_ds=a_ds, alpha_ss=a_ss,
                entry_params=params, x_star_guard=x_guard.x,
                x_ds_entry=x0.x, T_ds=info["ds_dwell"],
                T_ss=info["ss_dwell"], invariance_residual=np.nan,
                fixed_point_residual=fp_res,
            ),
            model=model,
        )
        if with_fixed_point:
            x_guard, fp_res, _ = find_fixed_point(hs, ctrl, x_guard)
        # nominal-orbit rollout from the sharpened fixed point
        _, x_plus, _, _ = reset(hs, SS, x_guard)
        x2, info2 = rollout_step(model, x_plus, a_ds, a_ss, structure,
                                 rtol=1e-9, sample_dt=2e-3)
        if x2 is None:
            raise FitFailed("nominal rollout from fixed point failed")
        d_alpha = max(
            float(np.max(np.abs(info2["alpha_ds_pinned"] - a_ds))),
            float(np.max(np.abs(info2["alpha_ss_pinned"] - a_ss))),
        )
        a_ds = info2["alpha_ds_pinned"]
        a_ss = info2["alpha_ss_pinned"]
        if not with_fixed_point or (d_alpha < 1e-10 and fp_res <= 1e-8):
            break
    if with_fixed_point and fp_res > 1e-8:
        raise FitFailed(f"fixed-point residual {fp_res:.3g} > 1e-8")
    T_ds, T_ss = info2["ds_dwell"], info2["ss_dwell"]

    p = hip_advance_form(model)
    profiles, charts, inv_res = {}, {}, 0.0
    entries = {DS: x_plus, SS: info2["x_ds_exit"]}
    alphas = {DS: a_ds, SS: a_ss}
    for dom in (DS, SS):
        ts, xs = info2[f"{dom}_samples"]
        t0 = ts[0]
        tau0 = float(p @ entries[dom].q)
        tau_vals = (xs[:, :model.n] @ p - tau0) / structure.v_d
        profiles[dom] = (ts - t0, tau_vals)
        spec = make_spec(model, dom, alphas[dom], structure)
        ph = dataclasses.replace(spec.phase, tau0=tau0)
        spec = dataclasses.replace(spec, phase=ph)
        # invariance: transverse error at domain entry after the reset
        ts_entry, _ = output_errors(model, spec, entries[dom])
        inv_res = max(inv_res, float(np.max(np.abs(ts_entry.eta)))
                      if ts_entry.eta.size else 0.0)
        # freeze the zero chart at the orbit midpoint
        mid = xs[len(xs) // 2]
        charts[dom] = build_zero_chart(
            model, spec, State(mid[:model.n], mid[model.n:]))

    if inv_res > periodicity_tol:
        raise FitFailed(f"invariance residual {inv_res:.3g}")

    return GaitArtifact(
        structure=structure,
        alpha_ds=a_ds, alpha_ss=a_ss, entry_params=np.asarray(params),
        x_star_guard=x_guard.x, x_ds_entry=x_plus.x,
        T_ds=float(T_ds), T_ss=float(T_ss),
        invariance_residual=float(inv_res),
        fixed_point_residual=float(fp_res),
        tau_profile_ds=profiles[DS], tau_profile_ss=profiles[SS],
        chart_ds=(charts[DS].Z, charts[DS].x_ref),
        chart_ss=(charts[SS].Z, charts[SS].x_ref),
    )
