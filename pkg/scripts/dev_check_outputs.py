"""Dev sanity checks for outputs.py: Bezier calculus, Lie derivatives vs FD,
chart dimensions, and reconstruction convergence."""
import numpy as np

from isswalk.dynamics import (
    ConstraintSet, Link, RobotModel, State, constrained_vector_field,
    dynamics_terms, project_velocity,
)
from isswalk.outputs import (
    OutputSpec, PhaseSpec, bezier_eval, build_zero_chart, desired_outputs,
    lie_derivatives, output_errors, phase_state, phzd_reconstruct,
    set_frame_anchors, zero_coords,
)

rng = np.random.default_rng(0)

# 1. Bezier: endpoint interpolation, FD derivative check, extrapolation
alpha = rng.normal(size=7)
v0, d0, _ = bezier_eval(alpha, 0.0)
v1, d1e, _ = bezier_eval(alpha, 1.0)
print("bezier endpoints:", abs(v0 - alpha[0]), abs(v1 - alpha[-1]))
print("bezier end d1:", abs(d0 - 6 * (alpha[1] - alpha[0])),
      abs(d1e - 6 * (alpha[-1] - alpha[-2])))
h = 1e-6
errs = []
for s in [0.13, 0.5, 0.97]:
    v, d1, d2 = bezier_eval(alpha, s)
    vp = bezier_eval(alpha, s + h)[0]
    vm = bezier_eval(alpha, s - h)[0]
    errs.append(abs((vp - vm) / (2 * h) - d1))
    errs.append(abs((vp - 2 * v + vm) / h**2 - d2))
print("bezier FD err:", max(errs))
vx, dx, d2x = bezier_eval(alpha, 1.3)
print("extrap:", abs(vx - (v1 + 0.3 * d1e)), abs(dx - d1e), d2x)

# 2. Walker model (5-link floating) + ss-domain spec
links = [
    Link("torso", 12.0, 1.33, 0.6, -0.3),
    Link("thigh_l", 6.8, 0.47, 0.4, 0.16, parent=0, attach=0.0),
    Link("thigh_r", 6.8, 0.47, 0.4, 0.16, parent=0, attach=0.0),
    Link("calf_l", 3.2, 0.20, 0.4, 0.13, parent=1),
    Link("calf_r", 3.2, 0.20, 0.4, 0.13, parent=2),
]
model = RobotModel(
    links, base="floating",
    actuated_joints=["thigh_l", "thigh_r", "calf_l", "calf_r"],
    contact_frames={"foot_l": (3, 0.4), "foot_r": (4, 0.4)},
)
n = model.n
cs_ss = ConstraintSet((("foot_l", ("x", "z")),))

# hip forward position linear form: base x + half-sum... use stance-leg based
# linearization: p_hip approximately x-coordinate of base
p = np.zeros(n); p[0] = 1.0
V1 = p.reshape(1, -1)
# y2: torso pitch (abs), swing thigh rel, swing calf rel
V2 = np.zeros((3, n))
V2[0, 2] = 1.0          # torso absolute angle
V2[1, model.angle_index("thigh_r")] = 1.0
V2[2, model.angle_index("calf_r")] = 1.0
alpha2 = rng.normal(scale=0.3, size=(3, 6))
spec = OutputSpec(
    domain="ss", V1=V1, c1=np.array([0.6]), V2=V2, alpha=alpha2,
    phase=PhaseSpec(mode="state", p=p, v_d=0.6, tau0=-0.05),
    phase_range=0.5, constraints=cs_ss, active=(0, 1, 2, 3),
)

q0 = np.array([0.02, 0.78, 0.1, -0.25, 0.35, 0.1, -0.2])
qd0 = rng.normal(scale=0.4, size=n)
qd0 = project_velocity(model, q0, qd0, cs_ss)
x0 = State(q0, qd0)

# 3. Lie derivatives vs FD along the constrained flow
ld = lie_derivatives(model, spec, x0)
ts0, fl = output_errors(model, spec, x0)
print("flags:", fl, "Lf_y2 vs y2dot:", np.max(np.abs(ld.Lf_y2 - ts0.y2dot)))

u = rng.normal(scale=5.0, size=model.m)
f, g = constrained_vector_field(model, x0, u, cs_ss)
xdot = f + g @ u
eps = 1e-6


def eta_of(xv):
    st = State(xv[:n], xv[n:])
    return output_errors(model, spec, st)[0].eta


deta = (eta_of(x0.x + eps * xdot) - eta_of(x0.x - eps * xdot)) / (2 * eps)
k1, k2 = 1, 3
pred_y1dot = ld.Lf_y1 + ld.Lg_y1 @ u
pred_y2dd = ld.Lf2_y2 + ld.LgLf_y2 @ u
print("y1dot FD err:", np.max(np.abs(deta[:k1] - pred_y1dot)))
print("y2dot FD err:", np.max(np.abs(deta[k1:k1 + k2] - ts0.y2dot)))
print("y2ddot FD err:", np.max(np.abs(deta[k1 + k2:] - pred_y2dd)))
print("decoupling cond:", ld.cond)

# 4. chart: dimension and zero_coords round trip
chart = build_zero_chart(model, spec, x0)
spec.chart = chart
dz = chart.dim
print("chart dim:", dz, "(expect", 2 * (n - 2) - 1 - 2 * 3, ")")
z0 = zero_coords(model, spec, x0)
print("z at ref:", np.max(np.abs(z0.z)))

# 5. reconstruction: perturb x0, ask for the surface point with same z
anchor = model.frame_position(q0, "foot_l")
set_frame_anchors(spec, {"foot_l": anchor})
xp = x0.x + rng.normal(scale=0.03, size=2 * n)
zp = zero_coords(model, spec, State(xp[:n], xp[n:]), check=False)
qd_d, qdd_d, fl = phzd_reconstruct(
    model, spec, np.zeros(1), zp, warm_start=State(xp[:n], xp[n:])
)
st = State(qd_d, qdd_d)
ts, _ = output_errors(model, spec, st)
print("recon flags:", fl, "|eta| at recon:",
      np.max(np.abs(ts.eta - np.concatenate([np.zeros(1), np.zeros(6)]))))
print("recon z err:", np.max(np.abs(zero_coords(model, spec, st, check=False).z - zp.z)))
from isswalk.dynamics import constraint_jacobian
Jh, _ = constraint_jacobian(model, qd_d, qdd_d, cs_ss)
print("recon pos anchor err:", np.max(np.abs(model.frame_position(qd_d, "foot_l") - anchor)))
print("recon vel constraint:", np.max(np.abs(Jh @ qdd_d)))

# 6. time-mode spec: profile tau(t) = t (identity) sanity
tgrid = np.linspace(0, 0.5, 21)
spec_t = OutputSpec(
    domain="ss", V1=V1, c1=np.array([0.6]), V2=V2, alpha=alpha2,
    phase=PhaseSpec(mode="time", p=p, v_d=0.6, tau0=-0.05,
                    profile_t=tgrid, profile_tau=tgrid.copy()),
    phase_range=0.5, constraints=cs_ss, active=(0, 1, 2, 3),
)
ldt = lie_derivatives(model, spec_t, x0, 0.22)
tst, _ = output_errors(model, spec_t, x0, 0.22)
tau = 0.22
y2d, dy2d, _ = desired_outputs(spec_t, tau)
print("time-mode y2 err:", np.max(np.abs(tst.y2 - (V2 @ q0 - y2d))))
print("time-mode y2dot err:", np.max(np.abs(tst.y2dot - (V2 @ qd0 - dy2d))))
