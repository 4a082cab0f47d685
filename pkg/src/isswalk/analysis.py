"""Orbit analysis: Poincare map, fixed points, Lyapunov certificates, and
empirical exponential ISS certification.

The Poincare section is the single-support touchdown guard (swing foot
height zero, stance foot anchored at the origin).  Section states are
charted by a frozen orthonormal basis of the section tangent space at a
reference point, with a Newton retraction back onto the section manifold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_continuous_lyapunov

from .dynamics import State, constraint_jacobian, dynamics_terms
from .disturbance import DisturbanceSpec
from .errors import (
    GaitUnstable,
    InsufficientSampling,
    IsswalkError,
    JacobianIncomplete,
    MapUndefined,
    NotHurwitz,
    Underactuated,
    FLAG_NEWTON_DIVERGED,
)
from .hybrid import DS, SS, HybridSystem, execute, reset
from .outputs import lie_derivatives
from .walker import CS_SS


# -- Lyapunov certificates -----------------------------------------------------


def a2_matrix(eps: float, k2: int) -> np.ndarray:
    """Closed-loop transverse matrix: y2ddot = -2 eps y2dot - eps^2 y2."""
    Ik = np.eye(k2)
    Z = np.zeros((k2, k2))
    return np.block([[Z, Ik], [-eps * eps * Ik, -2.0 * eps * Ik]])


def lyapunov_solve(A: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """P > 0 solving A^T P + P A = -Q for Hurwitz A."""
    A = np.asarray(A, dtype=float)
    Q = np.asarray(Q, dtype=float)
    ev = np.linalg.eigvals(A)
    if np.any(ev.real >= 0):
        raise NotHurwitz(f"max Re(eig) = {ev.real.max():.3g} >= 0")
    P = solve_continuous_lyapunov(A.T, -Q)
    P = 0.5 * (P + P.T)
    res = np.linalg.norm(A.T @ P + P @ A + Q)
    if res > 1e-10:
        raise IsswalkError(f"Lyapunov residual {res:.3g} > 1e-10")
    return P


def iss_lyapunov_check(
    trace,
    spec,
    eps: float,
    gamma1: float,
    gamma2: float,
    B2_norm: float,
    tol: float = 1e-8,
) -> dict:
    """Replay the transverse Lyapunov implication along one domain's samples.

    With V = eta2^T P2 eta2 (P2 from A2^T P2 + P2 A2 = -Q2, Q2 = I), checks
    that Vdot <= -gamma1 V whenever |eta2| exceeds the disturbance ball
    radius (2 lmax(P2) / (gamma2 lmin(P2))) * ||B2|| * ||d||_inf.
    Requires the split precheck (gamma1 + gamma2) P2 <= Q2.
    """
    k1, k2 = spec.k1, spec.k2
    A2 = a2_matrix(eps, k2)
    Q2 = np.eye(2 * k2)
    P2 = lyapunov_solve(A2, Q2)
    evP = np.linalg.eigvalsh(P2)
    gap = np.linalg.eigvalsh(Q2 - (gamma1 + gamma2) * P2)
    if gap[0] < -1e-12:
        raise IsswalkError(
            f"(gamma1+gamma2) P2 <= Q2 fails: min eig {gap[0]:.3g}"
        )
    sel = [i for i, dom in enumerate(trace.domain) if dom == spec.domain]
    if not sel:
        raise InsufficientSampling("trace has no samples in this domain")
    t = trace.t[sel]
    eta2 = trace.eta[sel][:, k1:k1 + 2 * k2]
    dinf = float(np.max(np.abs(trace.d[sel]))) if trace.d.size else 0.0
    ball = (2.0 * evP[-1] / (gamma2 * evP[0])) * B2_norm * dinf

    # split into contiguous segments (domain switches show up either as a
    # time gap or as a break in the selected trace rows)
    sel_arr = np.asarray(sel)
    seg_breaks = np.where((np.diff(t) > 5e-3)
                          | (np.diff(sel_arr) > 1))[0] + 1
    segments = np.split(np.arange(len(t)), seg_breaks)
    n_checked = 0
    violations = []
    for seg in segments:
        if len(seg) < 3:
            continue
        dt = np.diff(t[seg])
        if np.max(dt) > 1e-3 + 1e-9:
            raise InsufficientSampling(
                f"sample spacing {np.max(dt):.3g} s > 1e-3 s"
            )
        V = np.einsum("ij,jk,ik->i", eta2[seg], P2, eta2[seg])
        Vdot = np.gradient(V, t[seg])
        mag = np.linalg.norm(eta2[seg], axis=1)
        for i in range(1, len(seg) - 1):
            if mag[i] < ball:
                continue
            n_checked += 1
            if Vdot[i] > -gamma1 * V[i] + tol:
                violations.append((float(t[seg][i]), float(Vdot[i]),
                                   float(V[i])))
    return {
        "pass": len(violations) == 0,
        "n_checked": n_checked,
        "n_violations": len(violations),
        "violations": violations[:20],
        "ball_radius": float(ball),
        "d_inf": dinf,
        "lambda_min_P2": float(evP[0]),
        "lambda_max_P2": float(evP[-1]),
    }


def probe_b2_norm(model, spec, trace, domain: str, stride: int = 25) -> float:
    """Largest decoupling-matrix norm along a trace's samples in one domain.

    The actuator-disturbance input matrix on the transverse error is
    B2 = [0; LgLf_y2], so ||B2|| = max ||LgLf_y2||_2 over the orbit.
    """
    import dataclasses

    sel = [i for i, dom in enumerate(trace.domain) if dom == domain]
    if not sel:
        raise InsufficientSampling("trace has no samples in this domain")
    spec_s = spec
    if spec.phase.mode != "state":
        spec_s = dataclasses.replace(
            spec, phase=dataclasses.replace(
                spec.phase, mode="state", profile_t=None, profile_tau=None))
    n = model.n
    best = 0.0
    for i in sel[::stride]:
        st = State(trace.x[i][:n], trace.x[i][n:])
        terms = dynamics_terms(model, st.q, st.qdot, spec.constraints)
        ld = lie_derivatives(model, spec_s, st, None, terms)
        best = max(best, float(np.linalg.norm(ld.LgLf_y2, 2)))
    return best


# -- Poincare section chart ------------------------------------------------------


class SectionChart:
    """Orthonormal chart of the touchdown-guard section at a reference state.

    Section conditions: stance foot at its anchor (2), swing foot height 0
    (guard, 1), and stance velocity constraint rows (2).  The chart maps
    xi = S^T (x - x_ref); retraction solves the section conditions with the
    chart value pinned.
    """

    def __init__(self, model, x_ref: State):
        self.model = model
        self.x_ref = x_ref.x.copy()
        self.anchor = model.frame_position(x_ref.q, "foot_l")
        rows = self._condition_jacobian(x_ref)
        Qfull, _ = np.linalg.qr(rows.T, mode="complete")
        self.S = Qfull[:, rows.shape[0]:]

    def _conditions(self, st: State) -> np.ndarray:
        m = self.model
        pl = m.frame_position(st.q, "foot_l") - self.anchor
        pr_z = m.frame_position(st.q, "foot_r")[1]
        J, _ = constraint_jacobian(m, st.q, st.qdot, CS_SS)
        return np.concatenate([pl, [pr_z], J @ st.qdot])

    def _condition_jacobian(self, st: State) -> np.ndarray:
        m = self.model
        n = m.n
        J, Jd = constraint_jacobian(m, st.q, st.qdot, CS_SS)
        Jr = m.frame_jacobian(st.q, "foot_r")
        rows = np.zeros((5, 2 * n))
        rows[0:2, :n] = J  # stance-foot position rows equal its Jacobian
        rows[2, :n] = Jr[1]
        rows[3:5, :n] = Jd
        rows[3:5, n:] = J
        return rows

    @property
    def dim(self) -> int:
        return self.S.shape[1]

    def to_chart(self, x: State) -> np.ndarray:
        return self.S.T @ (x.x - self.x_ref)

    def from_chart(self, xi: np.ndarray) -> State:
        n = self.model.n
        xv = self.x_ref + self.S @ xi
        for _ in range(50):
            st = State(xv[:n], xv[n:])
            F = np.concatenate([
                self._conditions(st),
                self.S.T @ (xv - self.x_ref) - xi,
            ])
            if np.max(np.abs(F)) < 1e-12:
                break
            Jmat = np.vstack([self._condition_jacobian(st), self.S.T])
            xv = xv - np.linalg.solve(Jmat, F)
        return State(xv[:n], xv[n:])


# -- Poincare map ---------------------------------------------------------------


def poincare(
    hs: HybridSystem,
    controller,
    x_guard: State,
    disturbance: DisturbanceSpec | None = None,
    nominal_eps: float = 10.0,
) -> State:
    """One return-map application from the touchdown guard section."""
    _, x_plus, _, _ = reset(hs, SS, x_guard)
    if disturbance is not None:
        x_plus = disturbance.perturb_impact(
            hs.model, x_plus, hs.specs[DS].constraints
        )
    tr = execute(
        hs, x_plus, controller, 1, domain0=DS, disturbance=disturbance,
        nominal_eps=nominal_eps, sample_dt=None, record=False,
    )
    for bad in ("NoImpact", "IntegrationBlowup"):
        if bad in tr.flags:
            raise MapUndefined(f"Poincare map failed: {bad}")
    ev = tr.events[-1]
    if ev["kind"] != "touchdown":
        raise MapUndefined("rollout did not reach touchdown")
    return State(ev["x_minus"].q, ev["x_minus"].qdot)


def find_fixed_point(
    hs: HybridSystem,
    controller,
    x_init: State,
    tol: float = 1e-8,
    max_iter: int = 50,
    fd_step: float = 1e-6,
):
    """Newton on xi -> chart(P(x(xi))) - xi with FD Jacobian + line search.

    Returns (x_star, residual, flags).
    """
    chart = SectionChart(hs.model, x_init)
    k = chart.dim
    xi = np.zeros(k)

    def res(xi_):
        xg = chart.from_chart(xi_)
        return chart.to_chart(poincare(hs, controller, xg)) - xi_

    flags: list[str] = []
    r = res(xi)
    best_xi, best_norm = xi.copy(), float(np.linalg.norm(r))
    for it in range(max_iter):
        rn = float(np.linalg.norm(r))
        if rn < best_norm:
            best_norm, best_xi = rn, xi.copy()
        if rn <= tol:
            break
        J = np.empty((k, k))
        for j in range(k):
            e = np.zeros(k)
            e[j] = fd_step
            J[:, j] = (res(xi + e) - r) / fd_step
        try:
            dxi = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError:
            flags.append(FLAG_NEWTON_DIVERGED)
            break
        # damped line search
        step = 1.0
        for _ in range(8):
            r_try = res(xi + step * dxi)
            if np.linalg.norm(r_try) < rn:
                xi = xi + step * dxi
                r = r_try
                break
            step *= 0.5
        else:
            flags.append(FLAG_NEWTON_DIVERGED)
            break
    else:
        flags.append(FLAG_NEWTON_DIVERGED)
    rn = float(np.linalg.norm(r))
    if rn < best_norm:
        best_norm, best_xi = rn, xi.copy()
    x_star = chart.from_chart(best_xi)
    return x_star, best_norm, flags


def linearized_poincare(
    hs: HybridSystem,
    controller,
    x_star: State,
    fd_step: float = 1e-6,
):
    """Central-FD Jacobian of the Poincare map in the section chart.

    Returns (jacobian, spectral_radius, chart).
    """
    chart = SectionChart(hs.model, x_star)
    k = chart.dim
    J = np.empty((k, k))
    for j in range(k):
        e = np.zeros(k)
        e[j] = fd_step
        try:
            rp = chart.to_chart(
                poincare(hs, controller, chart.from_chart(e)))
            rm = chart.to_chart(
                poincare(hs, controller, chart.from_chart(-e)))
        except MapUndefined as exc:
            raise JacobianIncomplete(f"probe {j} failed: {exc}") from exc
        J[:, j] = (rp - rm) / (2 * fd_step)
    rho = float(np.max(np.abs(np.linalg.eigvals(J))))
    return J, rho, chart


# -- empirical e-ISS --------------------------------------------------------------


@dataclass
class IssReport:
    spectral_radius: float
    N_p: float
    xi_p: float
    r_squared: float
    decay_curves: list  # per perturbation: list of |P^i - x*|
    gain_curve: list  # per magnitude: dict(delta, bounds, mean, ci_lo, ci_hi)
    n_steps: int
    n_seeds: int
    verdict: str  # "PASS" | "FAIL"
    notes: list = field(default_factory=list)


def estimate_iss_gain(
    hs: HybridSystem,
    controller,
    x_star: State,
    magnitude_grid,
    n_steps: int = 10,
    n_seeds: int = 20,
    spectral_radius: float | None = None,
    channel: str = "uniform_random",
    decay_magnitude: float = 1e-3,
    n_decay_dirs: int = 8,
    decay_fit_steps: tuple[int, int] = (2, 10),
    controller_factory=None,
    rng_seed: int = 1234,
) -> IssReport:
    """Empirical exponential-ISS certification of the orbit.

    (a) zero disturbance: geometric decay fit of |P^i(x0) - x*| from radial
    perturbations; (b) disturbance sweep: ultimate bound of the guard error
    (tail 40% of steps) per magnitude x seed.  Verdict PASS iff the decay
    rate is in (0,1), the zero-magnitude bound is at the numerical floor,
    and no rollout fails within the grid.
    """
    chart = SectionChart(hs.model, x_star)
    rng = np.random.default_rng(rng_seed)
    notes: list[str] = []

    def make_ctrl():
        return controller_factory() if controller_factory else controller

    # (a) zero-disturbance decay
    i_lo, i_hi = decay_fit_steps
    decay_curves = []
    log_i, log_r = [], []
    for kdir in range(n_decay_dirs):
        v = rng.normal(size=chart.dim)
        v *= decay_magnitude / np.linalg.norm(v)
        xg = chart.from_chart(v)
        ctrl = make_ctrl()
        curve = []
        for i in range(1, i_hi + 1):
            try:
                xg = poincare(hs, ctrl, xg)
            except MapUndefined:
                notes.append(f"decay rollout {kdir} failed at step {i}")
                break
            curve.append(float(np.linalg.norm(chart.to_chart(xg))))
        decay_curves.append(curve)
        for i, r in enumerate(curve, start=1):
            if i_lo <= i <= i_hi and r > 0:
                log_i.append(i)
                log_r.append(np.log(r))
    log_i, log_r = np.array(log_i, float), np.array(log_r)
    A = np.stack([log_i, np.ones_like(log_i)], axis=1)
    coef, *_ = np.linalg.lstsq(A, log_r, rcond=None)
    slope, intercept = coef
    pred = A @ coef
    ss_res = float(np.sum((log_r - pred) ** 2))
    ss_tot = float(np.sum((log_r - log_r.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    xi_p = float(np.exp(slope))
    if xi_p >= 1.0:
        raise GaitUnstable(f"zero-disturbance decay rate xi_p = {xi_p:.4f} >= 1")
    # N_p: smallest prefactor covering every observed iterate
    N_p = 0.0
    for curve in decay_curves:
        for i, r in enumerate(curve, start=1):
            N_p = max(N_p, r / (xi_p**i * decay_magnitude))

    # (b) disturbance sweep
    gain_curve = []
    failures = 0
    tail_from = int(np.ceil(n_steps * 0.6))
    for delta in magnitude_grid:
        bounds = []
        seeds = range(1) if delta == 0 else range(n_seeds)
        for sd in seeds:
            dist = None
            if delta > 0:
                dist = DisturbanceSpec(
                    continuous=channel, magnitude=float(delta),
                    seed=int(sd), m=hs.model.m,
                )
            ctrl = make_ctrl()
            xg = State(x_star.q.copy(), x_star.qdot.copy())
            errs = []
            ok = True
            for i in range(n_steps):
                try:
                    xg = poincare(hs, ctrl, xg, disturbance=dist)
                except MapUndefined:
                    ok = False
                    break
                errs.append(float(np.linalg.norm(chart.to_chart(xg))))
            if not ok:
                failures += 1
                notes.append(f"rollout failed: delta={delta} seed={sd}")
                continue
            bounds.append(max(errs[tail_from - 1:]))
        bounds = np.array(bounds)
        if bounds.size:
            # bootstrap CI of the mean ultimate bound
            bs = rng.choice(bounds, size=(200, bounds.size), replace=True)
            means = bs.mean(axis=1)
            gain_curve.append({
                "delta": float(delta),
                "bounds": bounds.tolist(),
                "mean": float(bounds.mean()),
                "ci_lo": float(np.percentile(means, 2.5)),
                "ci_hi": float(np.percentile(means, 97.5)),
            })
        else:
            gain_curve.append({"delta": float(delta), "bounds": [],
                               "mean": float("nan"), "ci_lo": float("nan"),
                               "ci_hi": float("nan")})

    verdict = "PASS"
    if not (0.0 < xi_p < 1.0) or r2 < 0.99:
        verdict = "FAIL"
        notes.append(f"decay fit: xi_p={xi_p:.4f}, R2={r2:.4f}")
    finite = [g for g in gain_curve if np.isfinite(g["mean"])]
    zero_rows = [g for g in finite if g["delta"] == 0.0]
    if zero_rows and zero_rows[0]["mean"] > 1e-4:
        verdict = "FAIL"
        notes.append(f"zero-magnitude bound {zero_rows[0]['mean']:.3g} > 1e-4")
    # monotone nondecreasing within CI
    for a, b in zip(finite, finite[1:]):
        if b["ci_hi"] < a["ci_lo"]:
            verdict = "FAIL"
            notes.append(
                f"gain curve decreases from delta={a['delta']} to {b['delta']}"
            )
    if failures:
        verdict = "FAIL"

    return IssReport(
        spectral_radius=float("nan") if spectral_radius is None
        else float(spectral_radius),
        N_p=float(N_p), xi_p=xi_p, r_squared=float(r2),
        decay_curves=decay_curves, gain_curve=gain_curve,
        n_steps=n_steps, n_seeds=n_seeds, verdict=verdict, notes=notes,
    )


# -- strict Lyapunov function for PD tracking -------------------------------------


def strict_lyapunov_pd_check(
    model,
    traj_t: np.ndarray,
    traj_x: np.ndarray,
    q_d: np.ndarray,
    Kp: np.ndarray,
    Kd: np.ndarray,
    kappa0: float | None = None,
    n_samples: int = 10_000,
    residual_radius: float = 1e-2,
    rng_seed: int = 7,
) -> dict:
    """Cross-term strict Lyapunov candidate for fully actuated PD regulation.

    V = 1/2 edot^T D edot + 1/2 e^T Kp e + kappa(e) e^T D edot with
    kappa(e) = kappa0 / (1 + |e|).  Verifies the kappa0 smallness bound,
    positivity of V over sampled errors, and decrease of V along the
    trajectory outside the residual ball.
    """
    if model.m < model.n:
        raise Underactuated("strict Lyapunov analysis needs full actuation")
    Kp = np.atleast_2d(Kp) if np.ndim(Kp) == 2 else np.diag(np.atleast_1d(Kp) * np.ones(model.n))
    Kd = np.atleast_2d(Kd) if np.ndim(Kd) == 2 else np.diag(np.atleast_1d(Kd) * np.ones(model.n))
    from .dynamics import mass_matrix

    n = model.n
    Dmax = max(
        float(np.linalg.norm(mass_matrix(model, x[:n]), 2)) for x in traj_x
    )
    kp_norm = float(np.linalg.norm(Kp, 2))
    bound = np.sqrt(kp_norm * Dmax) / Dmax
    if kappa0 is None:
        kappa0 = 0.5 * bound
    bound_ok = kappa0 <= bound + 1e-15

    def V_of(q, qdot):
        e = q - q_d
        D = mass_matrix(model, q)
        kap = kappa0 / (1.0 + np.linalg.norm(e))
        return (0.5 * qdot @ D @ qdot + 0.5 * e @ Kp @ e
                + kap * e @ D @ qdot)

    rng = np.random.default_rng(rng_seed)
    min_ratio = np.inf
    positivity_ok = True
    worst = None
    for _ in range(n_samples):
        e = rng.normal(size=n) * rng.uniform(1e-3, 0.5)
        ed = rng.normal(size=n) * rng.uniform(1e-3, 1.0)
        v = V_of(q_d + e, ed)
        nrm = float(e @ e + ed @ ed)
        ratio = v / nrm
        if ratio < min_ratio:
            min_ratio = ratio
            worst = (e.copy(), ed.copy())
        if v <= 0:
            positivity_ok = False
    V_traj = np.array([V_of(x[:n], x[n:]) for x in traj_x])
    Vdot = np.gradient(V_traj, traj_t)
    err = np.array([
        np.linalg.norm(np.concatenate([x[:n] - q_d, x[n:]])) for x in traj_x
    ])
    outside = err > residual_radius
    n_viol = int(np.sum(Vdot[outside] >= 0))
    decreasing_ok = n_viol == 0
    return {
        "pass": bool(bound_ok and positivity_ok and decreasing_ok),
        "kappa0": float(kappa0),
        "kappa0_bound": float(bound),
        "bound_ok": bool(bound_ok),
        "positivity_ok": bool(positivity_ok),
        "min_V_ratio": float(min_ratio),
        "decrease_ok": bool(decreasing_ok),
        "n_decrease_violations": n_viol,
        "n_outside": int(np.sum(outside)),
    }
