"""Robust root find on v_d for the ds-entry speed gap.

Only converged polishes update the secant model; failed stages halve the
step and retry from the last good state.  Checkpoints are per-stage.
"""
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

src = sys.argv[1] if len(sys.argv) > 1 else "scripts/gait_vdstar.npz"
d = np.load(src)
params = d["params"]
model = make_walker()

# last good state
good = {
    "v": float(d["v_d"]),
    "gap": float(d["x_plus"][7]) - float(d["v_d"]),
    "a_ds": d["alpha_ds"], "a_ss": d["alpha_ss"],
    "x_guard": State(d["x_guard"][:7], d["x_guard"][7:]),
}
# converged history from earlier continuation runs
history = [(0.48, 0.031130), (0.44, 0.007894), (good["v"], good["gap"])]
print(f"start: v_d={good['v']:.8f} gap={good['gap']:+.3e}", flush=True)


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


def propose(hist):
    hist = sorted(hist, key=lambda h: abs(h[1]))[:2]
    (v1, g1), (v2, g2) = hist
    return v1 - g1 * (v1 - v2) / (g1 - g2)


max_step = 0.015
for k in range(25):
    v_t = propose(history)
    dv = np.clip(v_t - good["v"], -max_step, max_step)
    v_d = good["v"] + float(dv)
    t0 = time.time()
    try:
        a_ds, a_ss, x_guard, x_plus, info, fp_res = polish(
            v_d, good["a_ds"], good["a_ss"], good["x_guard"])
    except IsswalkError as e:
        max_step *= 0.5
        print(f"[{k}] v_d={v_d:.8f} FAILED ({e}) -> max_step={max_step:.4f} "
              f"({time.time()-t0:.0f}s)", flush=True)
        if max_step < 1e-4:
            print("step collapsed; stopping", flush=True)
            break
        continue
    gap = float(x_plus.qdot[0]) - v_d
    print(f"[{k}] v_d={v_d:.8f} gap={gap:+.3e} fp_res={fp_res:.2e} "
          f"dwells=({info['ds_dwell']:.4f},{info['ss_dwell']:.4f}) "
          f"({time.time()-t0:.0f}s)", flush=True)
    good = {"v": v_d, "gap": gap, "a_ds": a_ds, "a_ss": a_ss,
            "x_guard": x_guard}
    history.append((v_d, gap))
    np.savez(f"scripts/gait_stage{k:02d}.npz", params=params, alpha_ds=a_ds,
             alpha_ss=a_ss, x_guard=x_guard.x, x_plus=x_plus.x,
             fp_res=fp_res, v_d=v_d)
    if abs(gap) < 2e-7:
        np.savez("scripts/gait_final.npz", params=params, alpha_ds=a_ds,
                 alpha_ss=a_ss, x_guard=x_guard.x, x_plus=x_plus.x,
                 fp_res=fp_res, v_d=v_d)
        print("converged", flush=True)
        break
    max_step = min(max_step * 2.0, 0.015)
print("done", flush=True)
