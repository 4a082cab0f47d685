"""Hybrid executor pieces that need no fitted gait: trace serialization,
reset maps, guard values."""

import numpy as np
import pytest

from isswalk.dynamics import State, constraint_jacobian, impact_map
from isswalk.errors import SchemaMismatch
from isswalk.gait import GaitStructure, make_spec
from isswalk.hybrid import (
    DS,
    SS,
    ExecutionTrace,
    HybridSystem,
    guard_value,
    reset,
)
from isswalk.walker import CS_DS


def _hs(walker):
    st = GaitStructure()
    a_ds = np.zeros((2, 6))
    a_ss = np.zeros((4, 6))
    return HybridSystem(walker, {DS: make_spec(walker, DS, a_ds, st),
                                 SS: make_spec(walker, SS, a_ss, st)})


def _trace(rng, n=6):
    return ExecutionTrace(
        t=np.linspace(0.0, 0.005, n),
        x=rng.normal(size=(n, 14)),
        u=rng.normal(size=(n, 4)),
        d=rng.normal(scale=1e-3, size=(n, 4)),
        tau=np.linspace(0.0, 0.005, n),
        eta=rng.normal(size=(n, 8)),
        lam=rng.normal(size=(n, 4)),
        domain=["ds", "ds", "ds", "ss", "ss", "ss"][:n],
        step=np.zeros(n, dtype=int),
    )


def test_trace_csv_roundtrip(rng):
    tr = _trace(rng)
    text = tr.to_csv()
    tr2 = ExecutionTrace.from_csv(text)
    np.testing.assert_array_equal(tr2.t, tr.t)
    np.testing.assert_array_equal(tr2.x, tr.x)
    np.testing.assert_array_equal(tr2.u, tr.u)
    np.testing.assert_array_equal(tr2.d, tr.d)
    np.testing.assert_array_equal(tr2.eta, tr.eta)
    np.testing.assert_array_equal(tr2.lam, tr.lam)
    assert tr2.domain == tr.domain
    # serialization is value-exact, so a second round trip is byte-identical
    assert tr2.to_csv() == text


def test_trace_csv_header_and_schema(rng):
    text = _trace(rng).to_csv()
    header = text.splitlines()[0].split(",")
    assert header[0] == "schema_version"
    assert "lam_trail_z" in header
    with pytest.raises(SchemaMismatch):
        ExecutionTrace.from_csv(text.replace("schema_version", "version", 1))
    bad = text.splitlines()
    bad[1] = "9" + bad[1][1:]  # wrong schema number in the data row
    with pytest.raises(SchemaMismatch):
        ExecutionTrace.from_csv("\n".join(bad) + "\n")


def test_ds_liftoff_reset_is_identity(walker, q0, qd0):
    hs = _hs(walker)
    nxt, x_plus, impulse, fl = reset(hs, DS, State(q0, qd0))
    assert nxt == SS
    np.testing.assert_array_equal(x_plus.q, q0)
    np.testing.assert_array_equal(x_plus.qdot, qd0)
    assert impulse.size == 0 and fl == []


def test_ss_touchdown_reset_relabel_and_translate(walker, q0, qd0):
    hs = _hs(walker)
    nxt, x_plus, impulse, _ = reset(hs, SS, State(q0, qd0))
    assert nxt == DS
    # the new stance foot sits at the origin
    np.testing.assert_allclose(
        walker.frame_position(x_plus.q, "foot_l")[0], 0.0, atol=1e-12)
    # relabel preserves the leg geometry: old swing foot becomes new stance
    p_swing_old = walker.frame_position(q0, "foot_r")
    p_stance_new = walker.frame_position(x_plus.q, "foot_l")
    assert p_stance_new[1] == pytest.approx(p_swing_old[1], abs=1e-10)
    # impulse matches the plain impact map
    _, imp_direct, _ = impact_map(walker, q0, qd0, CS_DS)
    np.testing.assert_allclose(impulse, imp_direct, atol=1e-12)
    # post-reset velocity satisfies the ds contact constraints
    J, _ = constraint_jacobian(walker, x_plus.q, x_plus.qdot, CS_DS)
    np.testing.assert_allclose(J @ x_plus.qdot, 0, atol=1e-10)


def test_guard_values(walker, q0, qd0):
    hs = _hs(walker)
    # ss guard is the swing-foot height
    g_ss = guard_value(hs, SS, State(q0, qd0), np.zeros(4))
    assert g_ss == pytest.approx(
        walker.frame_position(q0, "foot_r")[1], abs=1e-14)
    # ds guard is the trailing-foot vertical contact force
    from isswalk.dynamics import dynamics_terms
    u = np.array([1.0, -0.5, 0.3, 0.2])
    terms = dynamics_terms(walker, q0, qd0, CS_DS)
    lam = terms.lam(u)
    g_ds = guard_value(hs, DS, State(q0, qd0), u)
    assert g_ds == pytest.approx(lam[CS_DS.row_index("foot_r", "z")],
                                 abs=1e-12)


def test_enter_domain_zeroes_phase(walker, q0, qd0):
    hs = _hs(walker)
    spec = hs.enter_domain(DS, State(q0, qd0))
    assert spec.phase.tau0 == pytest.approx(
        float(spec.phase.p @ q0), abs=1e-15)
    from isswalk.outputs import phase_state
    assert phase_state(spec, q0) == pytest.approx(0.0, abs=1e-15)
