"""Continuation in design speed: ramp v_d, re-pin, re-solve fixed point."""
import sys, time
import numpy as np
sys.path.insert(0, "src")
from isswalk.gait import (GaitArtifact, GaitStructure, build_hybrid_system,
                          rollout_step)
from isswalk.control import FBLinController
from isswalk.hybrid import SS, reset
from isswalk.dynamics import State
from isswalk.analysis import find_fixed_point
from isswalk.walker import make_walker
from isswalk.errors import MapUndefined

d = np.load("scripts/gait_polish_result.npz")
params, a_ds, a_ss = d["params"], d["alpha_ds"], d["alpha_ss"]
model = make_walker()
x_guard = State(d["x_guard"][:7], d["x_guard"][7:])
x_plus_x = None

for v_d in (0.64, 0.68, 0.72, 0.76, 0.80, 0.84):
    st = GaitStructure(v_d=v_d)
    ctrl = FBLinController(st.eps)
    # re-pin alphas under the new speed before solving
    hs0 = build_hybrid_system(GaitArtifact(
        structure=st, alpha_ds=a_ds, alpha_ss=a_ss, entry_params=params,
        x_star_guard=x_guard.x, x_ds_entry=x_guard.x, T_ds=0, T_ss=0,
        invariance_residual=np.nan, fixed_point_residual=np.nan), model=model)
    _, x_plus, _, _ = reset(hs0, SS, x_guard)
    x2, info = rollout_step(model, x_plus, a_ds, a_ss, st, rtol=1e-9)
    if x2 is None:
        print(f"v_d={v_d}: re-pin rollout failed", flush=True); break
    a_ds = info["alpha_ds_pinned"]; a_ss = info["alpha_ss_pinned"]
    fp_res = 1.0
    ok = True
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
        print(f"v_d={v_d} iter {it}: fp_res={fp_res:.3e} d_alpha={d_alpha:.3e}"
              f" dwells=({info2['ds_dwell']:.4f},{info2['ss_dwell']:.4f})"
              f" imp={np.round(info2['ss_impulse'],3)}"
              f" entry_vx={x_plus.qdot[0]:.3f} [{time.time()-t0:.0f}s]",
              flush=True)
        if d_alpha < 1e-10 and fp_res <= 1e-8:
            break
    if not ok:
        break
    x_plus_x = x_plus.x
    np.savez("scripts/gait_polish2_result.npz", params=params, alpha_ds=a_ds,
             alpha_ss=a_ss, x_guard=x_guard.x, x_plus=x_plus_x,
             fp_res=fp_res, v_d=v_d)
    print(f"v_d={v_d} stage done, saved", flush=True)
print("continuation finished", flush=True)
