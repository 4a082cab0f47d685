"""Two-domain hybrid execution: double support -> single support -> impact.

The directed cycle is ds --(trailing-foot normal force hits zero)--> ss
--(swing-foot touchdown)--> ds.  Liftoff is an identity reset; touchdown
applies the plastic impact map, relabels legs so the stance foot is always
``foot_l``, and translates the horizontal base coordinate so the new stance
foot sits at x = 0 (keeping the state bounded step to step).
"""

from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (
    RobotModel,
    State,
    dynamics_terms,
    impact_map,
    project_velocity,
)
from .errors import (
    FLAG_GRF_CONE_VIOLATION,
    FLAG_INTEGRATION_BLOWUP,
    FLAG_NEGATIVE_NORMAL_IMPULSE,
    FLAG_NO_IMPACT,
    SchemaMismatch,
)
from .integrate import STATUS_BLOWUP, STATUS_GUARD, integrate_domain
from .outputs import OutputSpec, output_errors, set_frame_anchors
from .walker import CS_DS, relabel_matrix

SCHEMA_VERSION = 1

DS, SS = "ds", "ss"
_NEXT = {DS: SS, SS: DS}


@dataclass
class HybridSystem:
    model: RobotModel
    specs: dict[str, OutputSpec]  # keyed by domain name
    mu_friction: float = 0.8
    max_dwell: float = 2.0
    touchdown_arm: float = 0.005  # swing foot must clear this height first
    rtol: float = 1e-9
    atol: float = 1e-11

    def __post_init__(self):
        self._R = relabel_matrix(self.model)
        self._grf_row_z = CS_DS.row_index("foot_r", "z")  # trailing foot in ds
        self._grf_row_x = CS_DS.row_index("foot_r", "x")

    def enter_domain(self, domain: str, x_plus: State) -> OutputSpec:
        """Domain-entry spec: phase zeroed at the entry state and contact
        anchors pinned at the entry foot positions."""
        spec = self.specs[domain]
        ph = dataclasses.replace(
            spec.phase, tau0=float(spec.phase.p @ x_plus.q)
        )
        spec = dataclasses.replace(spec, phase=ph)
        anchors = {
            name: self.model.frame_position(x_plus.q, name)
            for name, _ in spec.constraints.frames
        }
        set_frame_anchors(spec, anchors)
        return spec


@dataclass
class ExecutionTrace:
    """Sampled rollout: state, control, outputs, deviation, contact forces."""

    t: np.ndarray  # (N,)
    x: np.ndarray  # (N, 2n)
    u: np.ndarray  # (N, m)
    d: np.ndarray  # (N, m) deviation from the nominal linearizing input
    tau: np.ndarray  # (N,)
    eta: np.ndarray  # (N, k1 + 2 k2)
    lam: np.ndarray  # (N, 4): lead x/z then trail x/z (nan when inactive)
    domain: list[str]  # (N,)
    step: np.ndarray  # (N,) step index (touchdown count)
    events: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    n_rhs: int = 0

    def add_flags(self, fl):
        for f in fl:
            if f not in self.flags:
                self.flags.append(f)

    def to_csv(self) -> str:
        n2 = self.x.shape[1]
        m = self.u.shape[1]
        ke = self.eta.shape[1]
        cols = (
            ["schema_version", "step", "domain", "t"]
            + [f"x{i}" for i in range(n2)]
            + [f"u{i}" for i in range(m)]
            + [f"d{i}" for i in range(m)]
            + ["tau"]
            + [f"eta{i}" for i in range(ke)]
            + ["lam_lead_x", "lam_lead_z", "lam_trail_x", "lam_trail_z"]
        )
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for i in range(len(self.t)):
            row = [SCHEMA_VERSION, int(self.step[i]), self.domain[i],
                   _fmt(self.t[i])]
            row += [_fmt(v) for v in self.x[i]]
            row += [_fmt(v) for v in self.u[i]]
            row += [_fmt(v) for v in self.d[i]]
            row += [_fmt(self.tau[i])]
            row += [_fmt(v) for v in self.eta[i]]
            row += [_fmt(v) for v in self.lam[i]]
            w.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ExecutionTrace":
        rd = csv.reader(io.StringIO(text))
        header = next(rd)
        if header[0] != "schema_version":
            raise SchemaMismatch("missing schema_version column")
        names = header[1:]
        rows = list(rd)
        if rows and int(rows[0][0]) != SCHEMA_VERSION:
            raise SchemaMismatch(
                f"schema_version {rows[0][0]} != {SCHEMA_VERSION}"
            )
        idx = {nm: i + 1 for i, nm in enumerate(names)}
        nx = sum(nm.startswith("x") for nm in names)
        mu = sum(nm.startswith("u") and nm != "u" for nm in names)
        ke = sum(nm.startswith("eta") for nm in names)
        N = len(rows)
        tr = cls(
            t=np.empty(N), x=np.empty((N, nx)), u=np.empty((N, mu)),
            d=np.empty((N, mu)), tau=np.empty(N), eta=np.empty((N, ke)),
            lam=np.empty((N, 4)), domain=[], step=np.empty(N, dtype=int),
        )
        for i, r in enumerate(rows):
            tr.step[i] = int(r[idx["step"]])
            tr.domain.append(r[idx["domain"]])
            tr.t[i] = float(r[idx["t"]])
            tr.x[i] = [float(r[idx[f"x{j}"]]) for j in range(nx)]
            tr.u[i] = [float(r[idx[f"u{j}"]]) for j in range(mu)]
            tr.d[i] = [float(r[idx[f"d{j}"]]) for j in range(mu)]
            tr.tau[i] = float(r[idx["tau"]])
            tr.eta[i] = [float(r[idx[f"eta{j}"]]) for j in range(ke)]
            tr.lam[i] = [float(r[idx[c]]) for c in
                         ("lam_lead_x", "lam_lead_z", "lam_trail_x",
                          "lam_trail_z")]
        return tr


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def guard_value(hs: HybridSystem, domain: str, x: State, u: np.ndarray) -> float:
    """Scalar guard; the transition fires on a downward zero crossing."""
    if domain == DS:
        terms = dynamics_terms(hs.model, x.q, x.qdot, hs.specs[DS].constraints)
        return float(terms.lam(u)[hs._grf_row_z])
    return float(hs.model.frame_position(x.q, "foot_r")[1])


def step_integrate(
    hs: HybridSystem,
    domain: str,
    x0: State,
    controller,
    t0: float = 0.0,
    disturbance=None,
    sample_dt: float | None = 1e-3,
    spec: OutputSpec | None = None,
):
    """Integrate one domain until its guard fires.

    Returns (DomainResult, spec_used).  ``controller`` is a callable
    (model, spec, state, t_dom, terms=...) -> (u, flags); the disturbance
    object may distort the controller clock and add continuous input noise.
    """
    model = hs.model
    if spec is None:
        spec = hs.enter_domain(domain, x0)
    cs = spec.constraints
    cscale, coffset = 1.0, 0.0
    if disturbance is not None:
        cscale, coffset = disturbance.clock_distortion()

    def rhs(t, xv):
        st = State(xv[: model.n], xv[model.n:])
        terms = dynamics_terms(model, st.q, st.qdot, cs)
        t_dom = cscale * (t - t0) + coffset
        u, _ = controller(model, spec, st, t_dom, terms=terms)
        if disturbance is not None:
            u = u + disturbance.sample_continuous(t)
        return np.concatenate([st.qdot, terms.acc(u)])

    def guard(t, xv):
        st = State(xv[: model.n], xv[model.n:])
        if domain == SS:
            return float(model.frame_position(st.q, "foot_r")[1])
        terms = dynamics_terms(model, st.q, st.qdot, cs)
        t_dom = cscale * (t - t0) + coffset
        u, _ = controller(model, spec, st, t_dom, terms=terms)
        if disturbance is not None:
            u = u + disturbance.sample_continuous(t)
        return float(terms.lam(u)[hs._grf_row_z])

    def project(xv):
        qd = project_velocity(model, xv[: model.n], xv[model.n:], cs)
        return np.concatenate([xv[: model.n], qd])

    res = integrate_domain(
        rhs, x0.x, t0, hs.max_dwell, guard,
        rtol=hs.rtol, atol=hs.atol, project=project, sample_dt=sample_dt,
        arm_value=hs.touchdown_arm if domain == SS else 0.0,
    )
    return res, spec


def reset(hs: HybridSystem, domain: str, x_minus: State):
    """Domain-exit reset map.  Returns (next_domain, x_plus, impulse, flags)."""
    model = hs.model
    if domain == DS:  # liftoff: identity, trailing contact deactivates
        return SS, x_minus, np.zeros(0), []
    # touchdown: plastic impact on both feet, then leg relabel + translation
    qd_plus, impulse, flags = impact_map(model, x_minus.q, x_minus.qdot, CS_DS)
    # the impulse on the already-planted foot is a closed-chain reaction and
    # may legitimately point down (that contact releases at liftoff); only
    # the newly established contact must push
    iz = CS_DS.row_index("foot_r", "z")
    flags = [FLAG_NEGATIVE_NORMAL_IMPULSE] if impulse[iz] < 0 else []
    R = hs._R
    q_new = R @ x_minus.q
    qd_new = R @ qd_plus
    q_new[0] -= model.frame_position(q_new, "foot_l")[0]
    return DS, State(q_new, qd_new), impulse, flags


def _record_samples(hs, domain, spec, res, controller, disturbance, t0,
                    step_idx, nominal_eps, tr_lists):
    """Post-pass: controls, deviations, outputs, contact forces at samples."""
    from .control import fblin

    model = hs.model
    cs = spec.constraints
    cscale, coffset = 1.0, 0.0
    if disturbance is not None:
        cscale, coffset = disturbance.clock_distortion()
    spec_state = hs.specs[domain]
    lead_x = cs.row_index("foot_l", "x")
    lead_z = cs.row_index("foot_l", "z")
    has_trail = domain == DS
    for t, xv in zip(res.sample_t, res.sample_x):
        st = State(xv[: model.n], xv[model.n:])
        terms = dynamics_terms(model, st.q, st.qdot, cs)
        t_dom = cscale * (t - t0) + coffset
        u, cfl = controller(model, spec, st, t_dom, terms=terms)
        if disturbance is not None:
            u = u + disturbance.sample_continuous(t)
        if spec.phase.mode == "state":
            u_io, _ = fblin(model, spec, st, nominal_eps, terms=terms)
        else:
            sp2 = dataclasses.replace(
                spec_state,
                phase=dataclasses.replace(
                    spec_state.phase, mode="state", tau0=spec.phase.tau0,
                    profile_t=None, profile_tau=None,
                ),
            )
            u_io, _ = fblin(model, sp2, st, nominal_eps, terms=terms)
        ts, ofl = output_errors(model, spec, st, t_dom)
        if spec.phase.mode == "state":
            tau = float((spec.phase.p @ st.q - spec.phase.tau0) / spec.phase.v_d)
        else:
            tau = spec.phase.at_time(t_dom)[0]
        lam = terms.lam(u)
        lrow = np.full(4, np.nan)
        lrow[0], lrow[1] = lam[lead_x], lam[lead_z]
        if has_trail:
            lrow[2] = lam[cs.row_index("foot_r", "x")]
            lrow[3] = lam[cs.row_index("foot_r", "z")]
        fl = list(cfl) + list(ofl)
        for i in range(0, 4, 2):
            if not np.isnan(lrow[i + 1]) and lrow[i + 1] > 1e-9:
                if abs(lrow[i]) > hs.mu_friction * lrow[i + 1]:
                    fl.append(FLAG_GRF_CONE_VIOLATION)
        tr_lists["t"].append(t)
        tr_lists["x"].append(xv.copy())
        tr_lists["u"].append(u)
        tr_lists["d"].append(u - u_io)
        tr_lists["tau"].append(tau)
        tr_lists["eta"].append(ts.eta)
        tr_lists["lam"].append(lrow)
        tr_lists["domain"].append(domain)
        tr_lists["step"].append(step_idx)
        tr_lists["flags"].extend(fl)


def execute(
    hs: HybridSystem,
    x0: State,
    controller,
    n_steps: int,
    domain0: str = DS,
    disturbance=None,
    nominal_eps: float = 10.0,
    sample_dt: float | None = 1e-3,
    record: bool = True,
) -> ExecutionTrace:
    """Run ``n_steps`` touchdown-to-touchdown steps of the closed loop.

    The trace stores uniformly sampled states, applied controls, the
    deviation from the nominal state-based linearizing input, transverse
    outputs, and contact forces, plus an event log of every transition.
    """
    model = hs.model
    tr_lists = {k: [] for k in
                ("t", "x", "u", "d", "tau", "eta", "lam", "domain", "step")}
    tr_lists["flags"] = []
    events: list[dict] = []
    flags: list[str] = []
    n_rhs = 0

    domain, x, t = domain0, x0, 0.0
    steps_done = 0
    neg_impulse_run = 0
    while steps_done < n_steps:
        spec = hs.enter_domain(domain, x)
        if hasattr(controller, "reset_domain"):
            controller.reset_domain(spec, x)
        res, _ = step_integrate(
            hs, domain, x, controller, t, disturbance, sample_dt, spec=spec
        )
        n_rhs += res.n_rhs
        if record:
            _record_samples(hs, domain, spec, res, controller, disturbance,
                            t, steps_done, nominal_eps, tr_lists)
        if res.status == STATUS_BLOWUP:
            flags.append(FLAG_INTEGRATION_BLOWUP)
            break
        if res.status != STATUS_GUARD:
            flags.append(FLAG_NO_IMPACT)
            break
        x_minus = State(res.x_end[: model.n], res.x_end[model.n:])
        nxt, x_plus, impulse, rfl = reset(hs, domain, x_minus)
        if disturbance is not None and domain == SS:
            x_plus = disturbance.perturb_impact(model, x_plus, hs.specs[DS].constraints)
        events.append({
            "t": res.t_end,
            "kind": "touchdown" if domain == SS else "liftoff",
            "from": domain,
            "to": nxt,
            "impulse": [float(v) for v in impulse],
            "x_minus": x_minus,
            "x_plus": x_plus,
        })
        for f in rfl:
            if f not in flags:
                flags.append(f)
        if domain == SS:
            steps_done += 1
            if FLAG_NEGATIVE_NORMAL_IMPULSE in rfl:
                neg_impulse_run += 1
                if neg_impulse_run > 1:   # persisting pull contact: stop
                    domain, x, t = nxt, x_plus, res.t_end
                    break
            else:
                neg_impulse_run = 0
        domain, x, t = nxt, x_plus, res.t_end

    empty2 = lambda w: np.empty((0, w))
    # eta width differs per domain (k1 + 2 k2); pad rows with nan
    eta_rows = tr_lists["eta"]
    if eta_rows:
        ke = max(len(e) for e in eta_rows)
        eta_arr = np.full((len(eta_rows), ke), np.nan)
        for i, e in enumerate(eta_rows):
            eta_arr[i, : len(e)] = e
    else:
        eta_arr = empty2(0)
    trace = ExecutionTrace(
        t=np.array(tr_lists["t"]),
        x=np.array(tr_lists["x"]) if tr_lists["x"] else empty2(2 * model.n),
        u=np.array(tr_lists["u"]) if tr_lists["u"] else empty2(model.m),
        d=np.array(tr_lists["d"]) if tr_lists["d"] else empty2(model.m),
        tau=np.array(tr_lists["tau"]),
        eta=eta_arr,
        lam=np.array(tr_lists["lam"]) if tr_lists["lam"] else empty2(4),
        domain=tr_lists["domain"],
        step=np.array(tr_lists["step"], dtype=int),
        events=events,
        n_rhs=n_rhs,
    )
    trace.flags = flags
    trace.add_flags(tr_lists["flags"])
    trace._final_state = State(x.q, x.qdot)  # post-reset state after last step
    trace._final_domain = domain
    trace._final_t = t
    return trace
