"""Secant iteration on v_d driving the ds-entry speed gap (= y1 at entry,
= the hybrid-invariance residual) to zero."""
import dataclasses
import sys
import time

import numpy as np

sys.path.insert(0, "src")
from isswalk.analysis import find_fixed_point
from isswalk.control import FBLinController
from isswalk.dynamics import State
from isswalk.errors import MapUndefined
from isswalk.gait import GaitArtifact, GaitStructure, build_hybrid_system, rollout_step
from isswalk.hybrid import SS, reset
from isswalk.walker import make_walker

src = sys.argv[1] if len(sys.argv) > 1 else "scripts/gait_vd048.npz"
d = np.load(src)
params, a_ds, a_ss = d["params"], d["alpha_ds"], d["alpha_ss"]
v_prev = float(d["v_d"])
gap_prev = float(d["x_plus"][7]) - v_prev
model = make_walker()
x_guard = State(d["x_guard"][:7], d["x_guard"][7:])
print(f"start: v_d={v_prev} gap={gap_prev:+.6f}", flush=True)

v_d = 0.44  # first probe; secant afterwards


def polish(v_d, a_ds, a_ss, x_guard):
    st = GaitStructure(v_d=v_d)
    ctrl = FBLinController(st.eps)

    def art(T_ds=0.0, T_ss=0.0):
        return GaitArtifact(
            structure=st, alpha_ds=a_ds, alpha_ss=a_ss, entry_params=params,
            x_star_guard=x_guard.x, x_ds_entry=x_guard.x, T_ds=T_ds,
            T_ss=T_ss, invariance_residual=np.nan, fixed_point_residual=np.nan)

    _, x_plus, _, _ = reset(build_hybrid_system(art(), model=model), SS, x_guard)
    x2, info = rollout_step(model, x_plus, a_ds, a_ss, st, rtol=1e-9)
    if x2 is None:
        raise MapUndefined("re-pin rollout failed")
    a_ds, a_ss = info["alpha_ds_pinned"], info["alpha_ss_pinned"]
    fp_res = 1.0
    for it in range(8):
        hs = build_hybrid_system(art(info["ds_dwell"], info["ss_dwell"]),
                                 model=model)
        x_guard, fp_res, flags = find_fixed_point(hs, ctrl, x_guard)
        _, x_plus, _, _ = reset(hs, SS, x_guard)
        x2, info = rollout_step(model, x_plus, a_ds, a_ss, st, rtol=1e-9)
        if x2 is None:
            raise MapUndefined("polish rollout failed")
        d_alpha = max(float(np.max(np.abs(info["alpha_ds_pinned"] - a_ds))),
                      float(np.max(np.abs(info["alpha_ss_pinned"] - a_ss))))
        a_ds, a_ss = info["alpha_ds_pinned"], info["alpha_ss_pinned"]
        if d_alpha < 1e-10 and fp_res <= 1e-8:
            break
    return a_ds, a_ss, x_guard, x_plus, info, fp_res


for k in range(12):
    t0 = time.time()
    a_ds, a_ss, x_guard, x_plus, info, fp_res = polish(v_d, a_ds, a_ss, x_guard)
    gap = float(x_plus.qdot[0]) - v_d
    print(f"[{k}] v_d={v_d:.8f} gap={gap:+.3e} fp_res={fp_res:.2e} "
          f"dwells=({info['ds_dwell']:.4f},{info['ss_dwell']:.4f}) "
          f"({time.time()-t0:.0f}s)", flush=True)
    np.savez("scripts/gait_vdstar.npz", params=params, alpha_ds=a_ds,
             alpha_ss=a_ss, x_guard=x_guard.x, x_plus=x_plus.x,
             fp_res=fp_res, v_d=v_d)
    if abs(gap) < 2e-7 and fp_res <= 1e-8:
        print("converged", flush=True)
        break
    v_next = v_d - gap * (v_d - v_prev) / (gap - gap_prev)
    v_prev, gap_prev = v_d, gap
    v_d = float(np.clip(v_next, v_d - 0.04, v_d + 0.04))
print("done", flush=True)
