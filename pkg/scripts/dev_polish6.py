"""Close the ds-entry speed gap at fixed v_d by shaping one ss Bezier
coefficient (swing-thigh touchdown target), secant outer loop around the
fixed-point polish."""
import sys
import time

import numpy as np

sys.path.insert(0, "src")
from isswalk.analysis import find_fixed_point
from isswalk.control import FBLinController
from isswalk.dynamics import State
from isswalk.errors import IsswalkError, MapUndefined
from isswalk.gait import GaitArtifact, GaitStructure, build_hybrid_system, rollout_step
from isswalk.hybrid import SS, reset
from isswalk.walker import make_walker

src = sys.argv[1] if len(sys.argv) > 1 else "scripts/gait_stage00.npz"
ROW, COL = 2, 5       # alpha_ss[2, 5]: swing thigh, final Bezier column
d = np.load(src)
params = d["params"]
V_D = float(d["v_d"])
model = make_walker()
st = GaitStructure(v_d=V_D)
ctrl = FBLinController(st.eps)
print(f"fixed v_d={V_D}", flush=True)

base = {
    "a_ds": d["alpha_ds"], "a_ss": d["alpha_ss"],
    "x_guard": State(d["x_guard"][:7], d["x_guard"][7:]),
}


def polish(a_ds, a_ss, x_guard):
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
    for it in range(12):
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
    if fp_res > 1e-8:
        raise IsswalkError(f"polish stalled: fp_res={fp_res:.3g}")
    return a_ds, a_ss, x_guard, x_plus, info, fp_res


theta0 = float(base["a_ss"][ROW, COL])
print(f"theta0 = {theta0:+.6f}", flush=True)

hist = []   # (theta, gap)
theta = theta0
dtheta_probe = 0.02
state = dict(base)
max_step = 0.05
for k in range(25):
    a_ss = state["a_ss"].copy()
    a_ss[ROW, COL] = theta
    t0 = time.time()
    try:
        a_ds, a_ss, x_guard, x_plus, info, fp_res = polish(
            state["a_ds"], a_ss, state["x_guard"])
    except IsswalkError as e:
        max_step *= 0.5
        print(f"[{k}] theta={theta:+.6f} FAILED ({e}); max_step={max_step:.4f}",
              flush=True)
        if not hist or max_step < 1e-5:
            print("cannot recover", flush=True)
            break
        tb, gb = min(hist, key=lambda h: abs(h[1]))
        theta = tb + np.clip(theta - tb, -max_step, max_step) * 0.5
        continue
    gap = float(x_plus.qdot[0]) - V_D
    step_x = -model.frame_position(x_plus.q, "foot_r")[0]
    print(f"[{k}] theta={theta:+.8f} gap={gap:+.3e} fp_res={fp_res:.2e} "
          f"dwells=({info['ds_dwell']:.4f},{info['ss_dwell']:.4f}) "
          f"step={step_x:.4f} ({time.time()-t0:.0f}s)", flush=True)
    hist.append((theta, gap))
    state = {"a_ds": a_ds, "a_ss": a_ss, "x_guard": x_guard}
    np.savez("scripts/gait_theta.npz", params=params, alpha_ds=a_ds,
             alpha_ss=a_ss, x_guard=x_guard.x, x_plus=x_plus.x,
             fp_res=fp_res, v_d=V_D)
    if abs(gap) < 2e-7:
        np.savez("scripts/gait_final.npz", params=params, alpha_ds=a_ds,
                 alpha_ss=a_ss, x_guard=x_guard.x, x_plus=x_plus.x,
                 fp_res=fp_res, v_d=V_D)
        print("converged", flush=True)
        break
    if len(hist) == 1:
        theta = theta0 + dtheta_probe
    else:
        (t1, g1), (t2, g2) = sorted(hist, key=lambda h: abs(h[1]))[:2]
        if g1 == g2:
            theta = t1 + dtheta_probe
        else:
            t_new = t1 - g1 * (t1 - t2) / (g1 - g2)
            theta = t1 + float(np.clip(t_new - t1, -max_step, max_step))
    max_step = min(max_step * 2.0, 0.05)
print("done", flush=True)
