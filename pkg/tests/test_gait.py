"""Gait machinery: entry pinning, seed posture, artifact serialization,
and the shipped fitted gait's certificates."""

import dataclasses

import numpy as np
import pytest

from isswalk.dynamics import State, constraint_jacobian
from isswalk.gait import (
    GaitArtifact,
    GaitStructure,
    build_hybrid_system,
    ds_entry_state,
    make_spec,
    output_matrices,
    pin_entry,
    rollout_step,
)
from isswalk.hybrid import DS, SS
from isswalk.outputs import output_errors
from isswalk.walker import CS_DS

STRUCT = GaitStructure()


def test_output_matrices_shapes(walker):
    V1d, c1d, V2d, V1s, c1s, V2s, p = output_matrices(walker, STRUCT)
    assert V1d.shape == (1, 7) and c1d.shape == (1,)
    assert V2d.shape == (2, 7)
    assert V1s.shape == (0, 7) and c1s.shape == (0,)
    assert V2s.shape == (4, 7)
    # relative-degree-1 output is the phase rate: same linear form
    np.testing.assert_array_equal(V1d[0], p)


def test_pin_entry_zeroes_entry_outputs(walker, q0, qd0, rng):
    alpha = rng.normal(size=(4, 6))
    spec = make_spec(walker, SS, alpha, STRUCT)
    taudot = float(spec.phase.p @ qd0 / spec.phase.v_d)
    a = pin_entry(alpha, spec.V2 @ q0, spec.V2 @ qd0, taudot,
                  spec.phase_range)
    spec = dataclasses.replace(
        spec, alpha=a,
        phase=dataclasses.replace(spec.phase,
                                  tau0=float(spec.phase.p @ q0)))
    ts, _ = output_errors(walker, spec, State(q0, qd0))
    np.testing.assert_allclose(ts.y2, 0, atol=1e-12)
    np.testing.assert_allclose(ts.y2dot, 0, atol=1e-12)
    # interior columns untouched
    np.testing.assert_array_equal(a[:, 2:], alpha[:, 2:])


def test_ds_entry_state_geometry(walker):
    params = np.array([-0.12, 0.72, 0.04, 0.6, -0.05, 0.1])
    x = ds_entry_state(walker, params, STRUCT)
    # lead foot at the origin, trailing foot one step behind
    np.testing.assert_allclose(
        walker.frame_position(x.q, "foot_l"), [0.0, 0.0], atol=1e-9)
    np.testing.assert_allclose(
        walker.frame_position(x.q, "foot_r"),
        [-STRUCT.step_length, 0.0], atol=1e-9)
    # base pose and rates taken verbatim
    np.testing.assert_allclose(x.q[:3], params[:3], atol=1e-12)
    np.testing.assert_allclose(x.qdot[:3], params[3:], atol=1e-12)
    # velocity consistent with both feet pinned
    J, _ = constraint_jacobian(walker, x.q, x.qdot, CS_DS)
    np.testing.assert_allclose(J @ x.qdot, 0, atol=1e-10)


def test_artifact_roundtrip(tmp_path, artifact):
    p = tmp_path / "gait.json"
    artifact.save(p)
    art2 = GaitArtifact.load(p)
    np.testing.assert_array_equal(art2.alpha_ds, artifact.alpha_ds)
    np.testing.assert_array_equal(art2.alpha_ss, artifact.alpha_ss)
    np.testing.assert_array_equal(art2.x_star_guard, artifact.x_star_guard)
    assert art2.structure == artifact.structure
    assert art2.T_ds == artifact.T_ds
    assert art2.spectral_radius == artifact.spectral_radius


def test_shipped_artifact_certificates(artifact):
    assert artifact.invariance_residual <= 1e-6
    assert artifact.fixed_point_residual <= 1e-8
    assert artifact.spectral_radius is not None
    assert artifact.spectral_radius < 1.0
    assert artifact.T_ds > 0 and artifact.T_ss > 0
    k2_ds, k2_ss = 2, 4
    assert artifact.alpha_ds.shape == (k2_ds, STRUCT.degree + 1)
    assert artifact.alpha_ss.shape == (k2_ss, STRUCT.degree + 1)


def test_shipped_artifact_is_periodic(walker, artifact):
    """One pinned-rollout step from the ds entry returns to it."""
    x0 = State(artifact.x_ds_entry[:7], artifact.x_ds_entry[7:])
    x1, info = rollout_step(walker, x0, artifact.alpha_ds,
                            artifact.alpha_ss, artifact.structure,
                            rtol=1e-10)
    assert x1 is not None
    gap = np.max(np.abs(x1.x - x0.x))
    assert gap <= 1e-6
    assert info["ds_dwell"] == pytest.approx(artifact.T_ds, abs=1e-5)
    assert info["ss_dwell"] == pytest.approx(artifact.T_ss, abs=1e-5)


def test_build_hybrid_system_modes(artifact):
    hs = build_hybrid_system(artifact)
    assert set(hs.specs) == {DS, SS}
    assert hs.specs[DS].phase.mode == "state"
    hst = build_hybrid_system(artifact, mode="time")
    assert hst.specs[SS].phase.mode == "time"
    t_mid = 0.5 * artifact.T_ss
    tau, taudot, _ = hst.specs[SS].phase.at_time(t_mid)
    assert 0.0 < tau < artifact.structure.phase_range_ss
    assert taudot > 0
