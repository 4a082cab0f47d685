"""Lyapunov certificates, section chart geometry, strict PD Lyapunov."""

import numpy as np
import pytest

from isswalk.analysis import (
    SectionChart,
    a2_matrix,
    lyapunov_solve,
    strict_lyapunov_pd_check,
)
from isswalk.dynamics import State, bias_vector, mass_matrix, project_velocity
from isswalk.errors import NotHurwitz, Underactuated
from isswalk.integrate import integrate_domain
from isswalk.walker import CS_SS

# P for the closed-loop transverse matrix at eps = 2, one output, Q = I
P_EPS2_ORACLE = [[1.125, 0.125], [0.125, 0.15625]]


def test_a2_matrix_structure():
    A = a2_matrix(3.0, 2)
    assert A.shape == (4, 4)
    np.testing.assert_allclose(A[:2, 2:], np.eye(2))
    np.testing.assert_allclose(A[2:, :2], -9.0 * np.eye(2))
    np.testing.assert_allclose(A[2:, 2:], -6.0 * np.eye(2))
    # double pole at -eps
    np.testing.assert_allclose(np.linalg.eigvals(A), -3.0, atol=1e-10)


def test_lyapunov_solve_scalar_identity():
    P = lyapunov_solve(-np.eye(3), 2.0 * np.eye(3))
    np.testing.assert_allclose(P, np.eye(3), atol=1e-12)


def test_lyapunov_solve_eps2_oracle():
    P = lyapunov_solve(a2_matrix(2.0, 1), np.eye(2))
    np.testing.assert_allclose(P, P_EPS2_ORACLE, atol=1e-12)


@pytest.mark.parametrize("eps", [1.0, 2.0, 5.0])
def test_lyapunov_residual_small(eps):
    A = a2_matrix(eps, 2)
    P = lyapunov_solve(A, np.eye(4))
    res = np.linalg.norm(A.T @ P + P @ A + np.eye(4))
    assert res <= 1e-10
    assert np.all(np.linalg.eigvalsh(P) > 0)


def test_lyapunov_rejects_non_hurwitz():
    with pytest.raises(NotHurwitz):
        lyapunov_solve(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.eye(2))


def test_section_chart_geometry(walker, q0, qd0):
    qd_c = project_velocity(walker, q0, qd0, CS_SS)
    # retract a generic state onto the section to get an on-section reference
    pre = SectionChart(walker, State(q0, qd_c))
    x_ref = pre.from_chart(np.zeros(pre.dim))
    chart = SectionChart(walker, x_ref)
    # 5 section conditions on a 14-dim state
    assert chart.dim == 9
    S = chart.S
    np.testing.assert_allclose(S.T @ S, np.eye(9), atol=1e-12)
    # chart of the reference is zero; retraction of zero is the reference
    assert np.linalg.norm(chart.to_chart(x_ref)) < 1e-12
    x_back = chart.from_chart(np.zeros(9))
    np.testing.assert_allclose(x_back.x, x_ref.x, atol=1e-9)
    # a retracted point satisfies the section conditions
    xi = 1e-3 * np.arange(1, 10)
    st = chart.from_chart(xi)
    np.testing.assert_allclose(chart._conditions(st), 0, atol=1e-10)
    np.testing.assert_allclose(chart.to_chart(st), xi, atol=1e-10)


def _pd_regulation_traj(pinned, q_start, kp, kd, t_end=3.0):
    # gravity-compensated PD so the origin is the closed-loop equilibrium
    from isswalk.dynamics import gravity_vector

    n = pinned.n

    def rhs(t, xv):
        q, qd = xv[:n], xv[n:]
        u = -kp * q - kd * qd + gravity_vector(pinned, q)
        D = mass_matrix(pinned, q)
        H = bias_vector(pinned, q, qd)
        return np.concatenate([qd, np.linalg.solve(D, pinned.B @ u - H)])

    x0 = np.concatenate([q_start, np.zeros(n)])
    res = integrate_domain(rhs, x0, 0.0, t_end, None, rtol=1e-8, atol=1e-10,
                           sample_dt=2e-3)
    return res.sample_t, res.sample_x


def test_strict_lyapunov_pd_pass_and_fail(pinned):
    n = pinned.n
    q_start = np.array([0.25, -0.2, 0.15, -0.1, 0.2])
    kp, kd = 400.0, 80.0
    ts, xs = _pd_regulation_traj(pinned, q_start, kp, kd)
    rep = strict_lyapunov_pd_check(
        pinned, ts, xs, np.zeros(n), kp, kd, n_samples=2000)
    assert rep["pass"]
    assert rep["bound_ok"] and rep["positivity_ok"] and rep["decrease_ok"]
    # 10x the admissible cross-term gain must break positive definiteness
    rep_bad = strict_lyapunov_pd_check(
        pinned, ts, xs, np.zeros(n), kp, kd,
        kappa0=10.0 * rep["kappa0_bound"], n_samples=2000)
    assert not rep_bad["pass"]
    assert not (rep_bad["bound_ok"] and rep_bad["positivity_ok"])


def test_strict_lyapunov_requires_full_actuation(walker):
    with pytest.raises(Underactuated):
        strict_lyapunov_pd_check(
            walker, np.zeros(2), np.zeros((2, 14)), np.zeros(7), 1.0, 1.0)
