"""Assemble the shipping gait artifact from a polished continuation stage.

Usage: python3 scripts/dev_assemble.py scripts/gait_vd048.npz
"""
import dataclasses
import json
import sys
import time

import numpy as np

from isswalk.analysis import linearized_poincare
from isswalk.control import FBLinController
from isswalk.dynamics import State
from isswalk.gait import (
    GaitStructure, build_hybrid_system, ds_entry_state, gait_fit,
)
from isswalk.walker import make_walker

npz = np.load(sys.argv[1])
vd = float(npz["v_d"])
params_old = npz["params"]
a_ds, a_ss = npz["alpha_ds"], npz["alpha_ss"]
x_plus = State(npz["x_plus"][:7], npz["x_plus"][7:])

model = make_walker()

# actual orbit step length: trailing foot position at the ds entry
L = -model.frame_position(x_plus.q, "foot_r")[0]
r_ss = float(npz["r_ss"]) if "r_ss" in npz.files else 0.40
print(f"v_d={vd}  orbit step length={L:.6f}  R_ss={r_ss}")
st = GaitStructure(v_d=vd, step_length=float(L), phase_range_ss=r_ss)

# fresh entry params straight off the orbit (base pose + base rates)
params = np.concatenate([x_plus.q[:3], x_plus.qdot[:3]])
x_chk = ds_entry_state(model, params, st)
print("ds_entry_state reproduction:",
      np.max(np.abs(x_chk.q - x_plus.q)), np.max(np.abs(x_chk.qdot - x_plus.qdot)))

t0 = time.time()
art = gait_fit(model, params, a_ds, a_ss, structure=st, rtol=1e-8,
               max_nfev=60, verbose=2)
print(f"gait_fit done in {time.time()-t0:.1f}s  inv={art.invariance_residual:.3g} "
      f"fp={art.fixed_point_residual:.3g} T_ds={art.T_ds:.4f} T_ss={art.T_ss:.4f}")

# tau range actually used in ss (extrapolation check)
ts, tau = art.tau_profile_ss
print(f"ss tau range: [{tau.min():.4f}, {tau.max():.4f}]  R_ss={st.phase_range_ss}")
ts, tau = art.tau_profile_ds
print(f"ds tau range: [{tau.min():.4f}, {tau.max():.4f}]  R_ds={st.phase_range_ds}")

hs = build_hybrid_system(art, model=model)
ctrl = FBLinController(st.eps)
t0 = time.time()
J, rho, _ = linearized_poincare(hs, ctrl, State(art.x_star_guard[:7],
                                                art.x_star_guard[7:]))
print(f"spectral radius = {rho:.6f}  ({time.time()-t0:.1f}s)")
ev = np.sort(np.abs(np.linalg.eigvals(J)))[::-1]
print("  |eig| =", np.array2string(ev, precision=4))
art = dataclasses.replace(art, spectral_radius=rho)

art.save("src/isswalk/data/gait_default.json")
seed = {
    "structure": dataclasses.asdict(st),
    "entry_params": np.asarray(art.entry_params).tolist(),
    "alpha_ds": np.asarray(art.alpha_ds).tolist(),
    "alpha_ss": np.asarray(art.alpha_ss).tolist(),
}
with open("src/isswalk/data/gait_seed.json", "w") as f:
    json.dump(seed, f, sort_keys=True, indent=1)
print("saved gait_default.json + gait_seed.json")
