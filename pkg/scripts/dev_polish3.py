"""Downward continuation in v_d, tracking entry-speed self-consistency."""
import sys, time
import numpy as np
sys.path.insert(0, "src")
from isswalk.gait import (GaitArtifact, GaitStructure, build_hybrid_system,
                          rollout_step)
from isswalk.control import FBLinController, fblin
from isswalk.hybrid import DS, SS, reset
from isswalk.dynamics import State, dynamics_terms
from isswalk.analysis import find_fixed_point
from isswalk.walker import make_walker, CS_DS
from isswalk.errors import MapUndefined
import dataclasses
from isswalk.gait import make_spec

src = sys.argv[1] if len(sys.argv) > 1 else "scripts/gait_polish_result.npz"
vds = [float(v) for v in sys.argv[2:]] or [0.56, 0.52, 0.48, 0.44, 0.40]
d = np.load(src)
params, a_ds, a_ss = d["params"], d["alpha_ds"], d["alpha_ss"]
model = make_walker()
x_guard = State(d["x_guard"][:7], d["x_guard"][7:])

def entry_grf(st, a_ds, x_plus):
    spec = make_spec(model, DS, a_ds, st)
    spec = dataclasses.replace(spec, phase=dataclasses.replace(
        spec.phase, tau0=float(spec.phase.p @ x_plus.q)))
    terms = dynamics_terms(model, x_plus.q, x_plus.qdot, CS_DS)
    u, _ = fblin(model, spec, x_plus, st.eps, terms=terms)
    lam = terms.lam(u)
    return float(lam[CS_DS.row_index("foot_r", "z")])

for v_d in vds:
    st = GaitStructure(v_d=v_d)
    ctrl = FBLinController(st.eps)
    hs0 = build_hybrid_system(GaitArtifact(
        structure=st, alpha_ds=a_ds, alpha_ss=a_ss, entry_params=params,
        x_star_guard=x_guard.x, x_ds_entry=x_guard.x, T_ds=0, T_ss=0,
        invariance_residual=np.nan, fixed_point_residual=np.nan), model=model)
    _, x_plus, _, _ = reset(hs0, SS, x_guard)
    x2, info = rollout_step(model, x_plus, a_ds, a_ss, st, rtol=1e-9)
    if x2 is None:
        print(f"v_d={v_d}: re-pin rollout failed", flush=True); break
    a_ds = info["alpha_ds_pinned"]; a_ss = info["alpha_ss_pinned"]
    fp_res = 1.0; ok = True
    for it in range(8):
        t0 = time.time()
        hs = build_hybrid_system(GaitArtifact(
            structure=st, alpha_ds=a_ds, alpha_ss=a_ss, entry_params=params,
            x_star_guard=x_guard.x, x_ds_entry=x_guard.x,
            T_ds=info["ds_dwell"], T_ss=info["ss_dwell"],
            invariance_residual=np.nan, fixed_point_residual=fp_res),
            model=model)
        try:
            x_guard, fp_res, flags = find_fixed_point(hs, ctrl, x_guard)
        except MapUndefined as e:
            print(f"v_d={v_d} iter {it}: {e}", flush=True); ok = False; break
        _, x_plus, _, _ = reset(hs, SS, x_guard)
        x2, info2 = rollout_step(model, x_plus, a_ds, a_ss, st, rtol=1e-9)
        if x2 is None:
            print(f"v_d={v_d} iter {it}: rollout failed", flush=True)
            ok = False; break
        d_alpha = max(float(np.max(np.abs(info2["alpha_ds_pinned"] - a_ds))),
                      float(np.max(np.abs(info2["alpha_ss_pinned"] - a_ss))))
        a_ds = info2["alpha_ds_pinned"]; a_ss = info2["alpha_ss_pinned"]
        info = info2
        if d_alpha < 1e-10 and fp_res <= 1e-8:
            break
    if not ok:
        break
    step_x = -model.frame_position(x_plus.q, "foot_r")[0]
    print(f"v_d={v_d}: fp_res={fp_res:.2e} "
          f"dwells=({info['ds_dwell']:.4f},{info['ss_dwell']:.4f}) "
          f"entry_vx={x_plus.qdot[0]:.3f} gap={x_plus.qdot[0]-v_d:+.3f} "
          f"step={step_x:.3f} grf_trail={entry_grf(st, a_ds, x_plus):.1f} "
          f"imp={np.round(info['ss_impulse'],2)}", flush=True)
    np.savez(f"scripts/gait_vd{int(round(v_d*100)):03d}.npz", params=params,
             alpha_ds=a_ds, alpha_ss=a_ss, x_guard=x_guard.x,
             x_plus=x_plus.x, fp_res=fp_res, v_d=v_d)
print("done", flush=True)
