"""Five-link planar biped: torso, two thighs, two calves, point feet.

Coordinates (floating base): q = (x, z, torso absolute angle, thigh_l,
thigh_r, calf_l, calf_r) with leg joints relative to their parent.  Leg
naming is a stance/swing convention, not anatomy: in single support the
stance foot is always ``foot_l``; the impact reset relabels legs so the
convention is restored after each touchdown.
"""

from __future__ import annotations

import numpy as np

from .dynamics import ConstraintSet, Link, RobotModel

TORSO, THIGH_L, THIGH_R, CALF_L, CALF_R = range(5)

# double support: both point feet pinned; single support: stance foot only
CS_DS = ConstraintSet((("foot_l", ("x", "z")), ("foot_r", ("x", "z"))))
CS_SS = ConstraintSet((("foot_l", ("x", "z")),))


def make_walker(gravity: float = 9.81, mass_scale: float = 1.0) -> RobotModel:
    """Default five-link model; ``mass_scale`` scales the torso mass and
    inertia (model-parameter disturbance channel)."""
    links = [
        Link("torso", 12.0 * mass_scale, 1.33 * mass_scale, 0.6, -0.3),
        Link("thigh_l", 6.8, 0.47, 0.4, 0.16, parent=TORSO, attach=0.0),
        Link("thigh_r", 6.8, 0.47, 0.4, 0.16, parent=TORSO, attach=0.0),
        Link("calf_l", 3.2, 0.20, 0.4, 0.13, parent=THIGH_L),
        Link("calf_r", 3.2, 0.20, 0.4, 0.13, parent=THIGH_R),
    ]
    return RobotModel(
        links,
        base="floating",
        actuated_joints=["thigh_l", "thigh_r", "calf_l", "calf_r"],
        contact_frames={"foot_l": (CALF_L, 0.4), "foot_r": (CALF_R, 0.4)},
        gravity=gravity,
    )


def make_pinned_chain(gravity: float = 9.81) -> RobotModel:
    """Fully actuated pinned five-link chain (stance foot welded at the
    origin, every joint driven); used by the strict-Lyapunov PD analysis."""
    links = [
        Link("calf_l", 3.2, 0.20, 0.4, 0.27),
        Link("thigh_l", 6.8, 0.47, 0.4, 0.24, parent=0),
        Link("torso", 12.0, 1.33, 0.6, 0.3, parent=1),
        Link("thigh_r", 6.8, 0.47, 0.4, 0.16, parent=2, attach=0.0),
        Link("calf_r", 3.2, 0.20, 0.4, 0.13, parent=3),
    ]
    return RobotModel(
        links,
        base="pinned",
        actuated_joints=["calf_l", "thigh_l", "torso", "thigh_r", "calf_r"],
        contact_frames={"foot_r": (4, 0.4)},
        gravity=gravity,
    )


def relabel_matrix(model: RobotModel) -> np.ndarray:
    """Leg-swap permutation on q: thigh_l <-> thigh_r, calf_l <-> calf_r."""
    n = model.n
    R = np.eye(n)
    for a, b in (("thigh_l", "thigh_r"), ("calf_l", "calf_r")):
        ia, ib = model.angle_index(a), model.angle_index(b)
        R[[ia, ib]] = R[[ib, ia]]
    return R


def hip_advance_form(model: RobotModel) -> np.ndarray:
    """Linear form whose value is the horizontal hip position: the hip
    coincides with the floating base, so this is just the x coordinate."""
    p = np.zeros(model.n)
    p[0] = 1.0
    return p
