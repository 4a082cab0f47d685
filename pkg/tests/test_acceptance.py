"""Acceptance suite: end-to-end certification of the shipped walking gait.

Each test is a desk-scale analog of one headline property: dynamics
correctness, transverse Lyapunov certificates, exponential output decay,
orbit existence/stability, empirical e-ISS, PD robustness, the strict
Lyapunov construction, the phase-uncertainty channel, and the deviation
histogram.  Total budget: under ten minutes.
"""

import dataclasses
import os

import numpy as np
import pytest

from isswalk import analysis
from isswalk.analysis import (
    SectionChart,
    a2_matrix,
    estimate_iss_gain,
    iss_lyapunov_check,
    lyapunov_solve,
    poincare,
    probe_b2_norm,
    strict_lyapunov_pd_check,
)
from isswalk.control import FBLinController, PDController
from isswalk.disturbance import DisturbanceSpec
from isswalk.dynamics import (
    State,
    bias_vector,
    constraint_jacobian,
    coriolis_matrix,
    dynamics_terms,
    impact_map,
    kinetic_energy,
    mass_matrix,
    mass_matrix_gradient,
    potential_energy,
    project_velocity,
)
from isswalk.gait import build_hybrid_system
from isswalk.hybrid import DS, SS, execute
from isswalk.walker import CS_DS, CS_SS


def _entry(artifact):
    return State(artifact.x_ds_entry[:7], artifact.x_ds_entry[7:])


def _guard(artifact):
    return State(artifact.x_star_guard[:7], artifact.x_star_guard[7:])


@pytest.fixture(scope="module")
def hs_fast(artifact, walker):
    # relaxed integrator tolerances for the long multi-step certifications
    return build_hybrid_system(artifact, model=walker, rtol=1e-7, atol=1e-9)


# -- 1. dynamics correctness ------------------------------------------------------


def test_acceptance_dynamics(walker):
    rng = np.random.default_rng(0)
    for _ in range(100):
        q = rng.uniform(-0.6, 0.6, walker.n)
        q[1] += 0.8
        qd = rng.normal(scale=1.0, size=walker.n)
        D = mass_matrix(walker, q)
        # symmetry and positive definiteness
        np.testing.assert_allclose(D, D.T, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(D)) > 0
        # Christoffel skew identity
        C = coriolis_matrix(walker, q, qd)
        Ddot = np.einsum("klr,r->kl", mass_matrix_gradient(walker, q), qd)
        assert abs(qd @ (Ddot - 2.0 * C) @ qd) <= 1e-10
        # power balance: dE/dt equals actuator power under constrained motion
        qd_c = project_velocity(walker, q, qd, CS_SS)
        u = rng.normal(scale=3.0, size=walker.m)
        terms = dynamics_terms(walker, q, qd_c, CS_SS)
        qdd = terms.acc(u)
        Edot = float(qd_c @ D @ qdd + 0.5 * qd_c @ Ddot_of(walker, q, qd_c)
                     @ qd_c + qd_c @ bias_vector(walker, q, np.zeros(walker.n)))
        P_in = float(qd_c @ (walker.B @ u))
        assert abs(Edot - P_in) <= 1e-6 * max(1.0, abs(P_in), abs(Edot))
        # contact forces: KKT block solve vs independent elimination
        lam = terms.lam(u)
        J, Jd = constraint_jacobian(walker, q, qd_c, CS_SS)
        A = J @ np.linalg.solve(D, J.T)
        b = J @ np.linalg.solve(
            D, walker.B @ u - bias_vector(walker, q, qd_c)) + Jd @ qd_c
        lam_ind = np.linalg.solve(A, -b)
        np.testing.assert_allclose(lam, lam_ind, atol=1e-9)
        # plastic impact: kinetic energy non-increase, post-impact invariance
        qd_plus, _, _ = impact_map(walker, q, qd, CS_DS)
        assert kinetic_energy(walker, q, qd_plus) <= (
            kinetic_energy(walker, q, qd) + 1e-10)
        Jds, _ = constraint_jacobian(walker, q, qd_plus, CS_DS)
        assert np.max(np.abs(Jds @ qd_plus)) <= 1e-10


def Ddot_of(model, q, qd):
    return np.einsum("klr,r->kl", mass_matrix_gradient(model, q), qd)


# -- 2. transverse Lyapunov certificate -------------------------------------------


@pytest.mark.parametrize("eps", [1.0, 2.0, 5.0])
def test_acceptance_lyapunov_residual(eps):
    for k2 in (2, 4):
        A = a2_matrix(eps, k2)
        P = lyapunov_solve(A, np.eye(2 * k2))
        res = np.linalg.norm(A.T @ P + P @ A + np.eye(2 * k2))
        assert res <= 1e-10


def test_acceptance_lyapunov_implication(artifact, hybrid_system, walker):
    # perturbed start (nonzero transverse error) + a small torque disturbance
    x0 = _entry(artifact)
    q = x0.q.copy()
    q[2] += 0.02
    q[3] -= 0.015
    qd = project_velocity(walker, q, x0.qdot + np.array(
        [0.0, 0.0, 0.1, -0.08, 0.05, 0.0, 0.0]), CS_DS)
    dist = DisturbanceSpec(continuous="uniform_random", magnitude=1e-6,
                           seed=3, m=4)
    tr = execute(hybrid_system, State(q, qd),
                 FBLinController(artifact.structure.eps), 2, domain0=DS,
                 disturbance=dist, nominal_eps=artifact.structure.eps,
                 sample_dt=2.5e-4)
    assert not any(f in tr.flags for f in ("NoImpact", "IntegrationBlowup"))
    checked = 0
    for dom in (DS, SS):
        spec = hybrid_system.specs[dom]
        B2 = probe_b2_norm(hybrid_system.model, spec, tr, dom)
        rep = iss_lyapunov_check(tr, spec, artifact.structure.eps,
                                 0.02, 0.04, B2)
        assert rep["pass"], rep
        checked += rep["n_checked"]
    assert checked > 0


# -- 3. exponential output decay --------------------------------------------------


def test_acceptance_output_decay(artifact, hybrid_system):
    eps = artifact.structure.eps
    rate = 0.9 * eps
    # reference constant from the closed-loop linearization: the double pole
    # at -eps gives a polynomial-times-exponential transient, so the best
    # envelope constant at rate 0.9*eps is max_t ||expm(A2 t)|| e^{0.9 eps t}
    from scipy.linalg import expm
    ts_ref = np.linspace(0.0, 0.5, 1001)
    C_lin = max(
        float(np.linalg.norm(expm(a2_matrix(eps, k2) * t), 2)
              * np.exp(rate * t))
        for k2 in (2, 4) for t in ts_ref)
    chart = SectionChart(hybrid_system.model, _guard(artifact))
    rng = np.random.default_rng(11)
    ctrl = FBLinController(eps)
    ratios = []
    for k in range(20):
        v = rng.normal(size=chart.dim)
        v *= 2e-3 / np.linalg.norm(v)
        xg = chart.from_chart(v)
        from isswalk.hybrid import reset
        _, x_plus, _, _ = reset(hybrid_system, SS, xg)
        tr = execute(hybrid_system, x_plus, ctrl, 1, domain0=DS,
                     nominal_eps=eps, sample_dt=1e-3)
        assert not any(f in tr.flags for f in ("NoImpact",
                                               "IntegrationBlowup"))
        for dom, k1, k2 in ((DS, 1, 2), (SS, 0, 4)):
            sel = [i for i, d in enumerate(tr.domain) if d == dom]
            t = tr.t[sel] - tr.t[sel[0]]
            eta2 = tr.eta[sel][:, k1:k1 + 2 * k2]
            nrm = np.linalg.norm(eta2, axis=1)
            n0 = max(nrm[0], 1e-12)
            env = np.exp(-rate * t) * n0
            ok = env >= 1e-7   # skip samples below the integration noise floor
            if np.any(ok):
                ratios.append(np.max(nrm[ok] / env[ok]))
    C = max(ratios)   # one shared constant covering every start and domain
    assert np.isfinite(C) and C <= 3.0 * C_lin
    for r in ratios:
        assert r <= C + 1e-12


# -- 4. orbit existence and stability ---------------------------------------------


def test_acceptance_orbit(artifact, hs_fast):
    assert artifact.invariance_residual <= 1e-6
    assert artifact.fixed_point_residual <= 1e-8
    assert artifact.spectral_radius < 1.0
    ctrl = FBLinController(artifact.structure.eps)
    tr = execute(hs_fast, _entry(artifact), ctrl, 100, domain0=DS,
                 nominal_eps=artifact.structure.eps, sample_dt=None,
                 record=False)
    tds = [e for e in tr.events if e["kind"] == "touchdown"]
    assert len(tds) == 100
    assert tr.flags == []
    x_star = artifact.x_star_guard
    drift = max(np.max(np.abs(e["x_minus"].x - x_star)) for e in tds)
    assert drift <= 1e-4


# -- 5. empirical e-ISS ------------------------------------------------------------


def test_acceptance_eiss(artifact, hybrid_system):
    eps = artifact.structure.eps
    x_star = _guard(artifact)
    grid = [0.0, 0.5, 1.0, 2.0, 4.0]
    rep = estimate_iss_gain(
        hybrid_system, None, x_star, grid, n_steps=10, n_seeds=20,
        spectral_radius=artifact.spectral_radius,
        controller_factory=lambda: FBLinController(eps),
    )
    assert rep.verdict == "PASS", rep.notes
    assert 0.0 < rep.xi_p < 1.0
    assert rep.r_squared >= 0.99
    zero = [g for g in rep.gain_curve if g["delta"] == 0.0][0]
    assert zero["mean"] <= 1e-4
    # geometric-iterate bound replay for the two smallest nonzero magnitudes
    chart = SectionChart(hybrid_system.model, x_star)
    by_delta = {g["delta"]: g for g in rep.gain_curve}
    for delta in grid[1:3]:
        offset = 3.0 * by_delta[delta]["ci_hi"]
        dist = DisturbanceSpec(continuous="uniform_random",
                               magnitude=delta, seed=0, m=4)
        ctrl = FBLinController(eps)
        xg = State(x_star.q.copy(), x_star.qdot.copy())
        e0 = 0.0
        for i in range(1, 11):
            xg = poincare(hybrid_system, ctrl, xg, disturbance=dist)
            err = float(np.linalg.norm(chart.to_chart(xg)))
            assert err <= rep.N_p * rep.xi_p**i * e0 + offset


# -- 6. PD robustness on the fully actuated chain ----------------------------------


def test_acceptance_pd_bench(tmp_path):
    from isswalk.cli import main

    out = str(tmp_path / "pd")
    assert main(["--out", out, "pd-bench"]) == 0
    rows = np.genfromtxt(os.path.join(out, "pd_bench.csv"),
                         delimiter=",", names=True)
    q = np.stack([rows[f"q{i}"] for i in range(5)], axis=1)
    d = np.stack([rows[f"d{i}"] for i in range(5)], axis=1)
    tail = rows["t"] >= rows["t"][-1] - 1.0
    assert np.max(np.abs(q[tail])) < 0.01          # steady tracking error
    assert np.max(np.abs(d)) > 0.0                 # deviation channel active
    assert np.all(np.isfinite(d))                  # and bounded


# -- 7. strict Lyapunov construction ------------------------------------------------


def test_acceptance_strict_lyapunov(pinned):
    import test_analysis as TA

    kp, kd = 400.0, 80.0
    ts, xs = TA._pd_regulation_traj(pinned, np.array([0.25, -0.2, 0.15,
                                                      -0.1, 0.2]), kp, kd)
    rep = strict_lyapunov_pd_check(pinned, ts, xs, np.zeros(5), kp, kd,
                                   n_samples=10_000)
    assert rep["pass"]
    rep_bad = strict_lyapunov_pd_check(
        pinned, ts, xs, np.zeros(5), kp, kd,
        kappa0=10.0 * rep["kappa0_bound"], n_samples=10_000)
    assert not rep_bad["pass"]


# -- 8. phase-uncertainty channel ---------------------------------------------------


def test_acceptance_phase_uncertainty(artifact, walker):
    hs_time = build_hybrid_system(artifact, model=walker, mode="time")
    eps = artifact.structure.eps
    # d3 on the nominal orbit: clock-based exact linearization at gamma = 1
    tr = execute(hs_time, _entry(artifact), FBLinController(eps), 2,
                 domain0=DS, nominal_eps=eps, sample_dt=1e-3)
    assert np.max(np.abs(tr.d)) <= 1e-8
    # ultimate guard-error bound grows with |gamma - 1| for clock-based PD
    x_star = artifact.x_star_guard

    def ultimate(gamma):
        dist = None
        if gamma != 1.0:
            dist = DisturbanceSpec(clock_scale=gamma, m=4)
        ctrl = PDController(kp=900.0, kd=60.0)
        tr = execute(hs_time, _entry(artifact), ctrl, 50, domain0=DS,
                     disturbance=dist, nominal_eps=eps, sample_dt=None,
                     record=False)
        tds = [e for e in tr.events if e["kind"] == "touchdown"]
        assert len(tds) == 50, f"fell at gamma={gamma}"
        errs = [float(np.max(np.abs(e["x_minus"].x - x_star)))
                for e in tds[30:]]
        return max(errs)

    b = {g: ultimate(g) for g in (0.95, 0.975, 1.0, 1.025, 1.05)}
    assert b[1.0] <= b[1.025] <= b[1.05]
    assert b[1.0] <= b[0.975] <= b[0.95]


# -- 9. deviation histogram ----------------------------------------------------------


def test_acceptance_deviation_histogram(artifact, tmp_path):
    from isswalk.cli import main

    args = ["--set", "controller.kind=pd", "--set", "run.steps=50",
            "--set", "run.sample_dt=0.005", "simulate"]
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["--out", out1] + args) == 0
    assert main(["--out", out2] + args) == 0
    with open(os.path.join(out1, "trace.csv"), "rb") as f:
        csv1 = f.read()
    with open(os.path.join(out2, "trace.csv"), "rb") as f:
        assert f.read() == csv1                     # byte-identical CSV
    pout1, pout2 = str(tmp_path / "p1"), str(tmp_path / "p2")
    assert main(["--out", pout1, "plot", os.path.join(out1, "trace.csv"),
                 "--kind", "histogram"]) == 0
    assert main(["--out", pout2, "plot", os.path.join(out2, "trace.csv"),
                 "--kind", "histogram"]) == 0
    with open(os.path.join(pout1, "trace_histogram.svg"), "rb") as f:
        svg1 = f.read()
    with open(os.path.join(pout2, "trace_histogram.svg"), "rb") as f:
        assert f.read() == svg1                     # byte-identical SVG
    # bounded deviation record over the 50-step walk
    rows = np.genfromtxt(os.path.join(out1, "trace.csv"),
                         delimiter=",", names=True)
    d = np.stack([rows[f"d{i}"] for i in range(4)], axis=1)
    assert np.all(np.isfinite(d))
    assert 0.0 < np.max(np.abs(d)) < 100.0
