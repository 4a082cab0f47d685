"""Planar rigid-body tree dynamics with holonomic contacts and plastic impacts.

Every body-fixed point is represented as

    p(q) = p_base(q) + sum_j a_j * d(theta_j),     d(theta) = (sin t, -cos t),

with constant coefficients ``a_j`` accumulated along the kinematic chain and
absolute link angles ``theta = W q`` linear in the coordinates.  That makes
positions, Jacobians, the mass matrix and its configuration gradient (hence
the Christoffel symbols) all closed-form.

Coordinate layout:
  * pinned base:   q = (joint angles), one per link, relative to parent;
                   link 0's parent is the world pin at the origin.
  * floating base: q = (x, z, angle of link 0, joint angles of links 1..),
                   n = 2 + number of links.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import (
    DimensionMismatch,
    SingularConstraintBlock,
    FLAG_NEGATIVE_NORMAL_IMPULSE,
)

_COND_LIMIT = 1e12


@dataclass(frozen=True)
class Link:
    name: str
    mass: float
    inertia: float  # about COM
    length: float
    com_offset: float  # along link axis from proximal joint (may be negative)
    parent: int = -1  # -1 = base
    attach: float | None = None  # along parent axis; default parent length


@dataclass(frozen=True)
class State:
    q: np.ndarray
    qdot: np.ndarray

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot])


@dataclass(frozen=True)
class ConstraintSet:
    """Active contact frames with per-frame constrained directions.

    ``frames`` is a tuple of (frame_name, directions) where directions is a
    subset of ("x", "z", "pitch").  Row order of J_h follows this order.
    """

    frames: tuple[tuple[str, tuple[str, ...]], ...] = ()

    @property
    def n_rows(self) -> int:
        return sum(len(dirs) for _, dirs in self.frames)

    def normal_row_indices(self) -> list[int]:
        """Rows of J_h corresponding to vertical ("z") contact directions."""
        idx, row = [], 0
        for _, dirs in self.frames:
            for d in dirs:
                if d == "z":
                    idx.append(row)
                row += 1
        return idx

    def row_index(self, frame: str, direction: str) -> int:
        row = 0
        for name, dirs in self.frames:
            for d in dirs:
                if name == frame and d == direction:
                    return row
                row += 1
        raise KeyError(f"no constraint row for ({frame}, {direction})")


class RobotModel:
    """Immutable planar link-tree model.

    Precomputes the constant path matrix W (theta = W q), the base
    translation Jacobian, and chain coefficient vectors for all COMs and
    contact frames, so runtime kinematics are pure numpy expressions.
    """

    def __init__(
        self,
        links: list[Link] | tuple[Link, ...],
        base: str = "floating",
        actuated_joints: list[str] | tuple[str, ...] = (),
        contact_frames: dict[str, tuple[int, float]] | None = None,
        gravity: float = 9.81,
    ):
        links = tuple(links)
        if base not in ("pinned", "floating"):
            raise ValueError(f"unknown base type: {base}")
        for ln in links:
            if ln.mass <= 0 or ln.length <= 0 or ln.inertia < 0:
                raise ValueError(f"bad inertial parameters on link {ln.name}")
        self.links = links
        self.base = base
        self.gravity = float(gravity)
        nl = len(links)
        self.n_links = nl
        self.n = nl if base == "pinned" else 2 + nl
        nb = 0 if base == "pinned" else 2  # translational base coords

        # angle coordinate index of each link
        ang = np.arange(nl) + nb
        self._ang_idx = ang

        # path matrix: theta_j = sum of angle coords along ancestor chain
        W = np.zeros((nl, self.n))
        for j, ln in enumerate(links):
            k = j
            while k >= 0:
                W[j, ang[k]] = 1.0
                k = links[k].parent
        self.W = W

        # base translation Jacobian (2 x n)
        E = np.zeros((2, self.n))
        if base == "floating":
            E[0, 0] = 1.0
            E[1, 1] = 1.0
        self.E = E

        # chain coefficients: proximal joint position of link j
        chain = np.zeros((nl, nl))
        for j, ln in enumerate(links):
            p = ln.parent
            if p >= 0:
                a = ln.attach if ln.attach is not None else links[p].length
                chain[j] = chain[p]
                chain[j, p] += a
        self._chain = chain

        # COM coefficients
        Ccom = chain.copy()
        for j, ln in enumerate(links):
            Ccom[j, j] += ln.com_offset
        self._Ccom = Ccom

        self.masses = np.array([ln.mass for ln in links])
        self.inertias = np.array([ln.inertia for ln in links])
        self.total_mass = float(self.masses.sum())
        # constant angular part of the mass matrix
        self._WIW = (W.T * self.inertias) @ W

        self._names = {ln.name: j for j, ln in enumerate(links)}
        self.contact_frames = dict(contact_frames or {})
        self._frame_coef = {
            name: self._point_coef(li, off)
            for name, (li, off) in self.contact_frames.items()
        }

        m = len(actuated_joints)
        B = np.zeros((self.n, m))
        for col, name in enumerate(actuated_joints):
            B[ang[self._names[name]], col] = 1.0
        if m and np.linalg.matrix_rank(B) < m:
            raise ValueError("actuation matrix is column-rank deficient")
        self.B = B
        self.m = m
        self.actuated_joints = tuple(actuated_joints)

    # -- kinematic primitives ------------------------------------------------

    def link_index(self, name: str) -> int:
        return self._names[name]

    def angle_index(self, name: str) -> int:
        """Coordinate index of a link's own (relative) angle."""
        return int(self._ang_idx[self._names[name]])

    def _point_coef(self, link: int, offset: float) -> np.ndarray:
        c = self._chain[link].copy()
        c[link] += offset
        return c

    def _check_q(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n,):
            raise DimensionMismatch(f"q has shape {q.shape}, expected ({self.n},)")
        return q

    def _trig(self, q: np.ndarray):
        th = self.W @ q
        s, c = np.sin(th), np.cos(th)
        d = np.stack([s, -c], axis=1)       # link axis directions
        dp = np.stack([c, s], axis=1)       # d' = d(theta)/dtheta
        return d, dp

    def base_position(self, q: np.ndarray) -> np.ndarray:
        return q[:2] if self.base == "floating" else np.zeros(2)

    def point_position(self, q, link: int, offset: float) -> np.ndarray:
        q = self._check_q(q)
        d, _ = self._trig(q)
        return self.base_position(q) + self._point_coef(link, offset) @ d

    def frame_position(self, q, frame: str) -> np.ndarray:
        q = self._check_q(q)
        d, _ = self._trig(q)
        return self.base_position(q) + self._frame_coef[frame] @ d

    def _coef_jacobian(self, coef: np.ndarray, dp: np.ndarray) -> np.ndarray:
        # J = E + sum_i coef_i * outer(d'(theta_i), W_i)
        return self.E + np.einsum("i,ia,ik->ak", coef, dp, self.W)

    def frame_jacobian(self, q, frame: str) -> np.ndarray:
        q = self._check_q(q)
        _, dp = self._trig(q)
        return self._coef_jacobian(self._frame_coef[frame], dp)

    def frame_jacobian_dot(self, q, qdot, frame: str) -> np.ndarray:
        q = self._check_q(q)
        d, _ = self._trig(q)
        thdot = self.W @ qdot
        coef = self._frame_coef[frame]
        # dJ/dt = sum_i coef_i * thetadot_i * outer(-d(theta_i), W_i)
        return np.einsum("i,ia,ik->ak", -coef * thdot, d, self.W)

    def com_positions(self, q) -> np.ndarray:
        q = self._check_q(q)
        d, _ = self._trig(q)
        return self.base_position(q) + self._Ccom @ d

    def _com_jacobians(self, dp: np.ndarray) -> np.ndarray:
        # (n_links, 2, n)
        return self.E[None] + np.einsum("ji,ia,ik->jak", self._Ccom, dp, self.W)


# -- core operations ---------------------------------------------------------


def mass_matrix(model: RobotModel, q: np.ndarray) -> np.ndarray:
    q = model._check_q(q)
    _, dp = model._trig(q)
    Jv = model._com_jacobians(dp)
    D = np.einsum("j,jak,jal->kl", model.masses, Jv, Jv) + model._WIW
    return D


def mass_matrix_gradient(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """dD/dq as an (n, n, n) tensor, grad[k, l, r] = dD_{kl}/dq_r."""
    q = model._check_q(q)
    d, dp = model._trig(q)
    Jv = model._com_jacobians(dp)
    # dJv[j, a, k, r] = d(Jv[j,a,k])/dq_r
    dJv = np.einsum("ji,ia,ik,ir->jakr", model._Ccom, -d, model.W, model.W)
    half = np.einsum("j,jakr,jal->klr", model.masses, dJv, Jv)
    return half + half.transpose(1, 0, 2)


def gravity_vector(model: RobotModel, q: np.ndarray) -> np.ndarray:
    q = model._check_q(q)
    _, dp = model._trig(q)
    Jv = model._com_jacobians(dp)
    return model.gravity * np.einsum("j,jk->k", model.masses, Jv[:, 1, :])


def coriolis_matrix(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """C(q, qdot) from Christoffel symbols, so Dd - 2C is skew-symmetric."""
    dD = mass_matrix_gradient(model, q)
    qdot = np.asarray(qdot, dtype=float)
    # C_kj = 1/2 sum_r (dD_kj/dq_r + dD_kr/dq_j - dD_jr/dq_k) qdot_r
    t1 = dD @ qdot                      # (k, j)
    t2 = np.einsum("krj,r->kj", dD, qdot)
    t3 = np.einsum("jrk,r->kj", dD, qdot)
    return 0.5 * (t1 + t2 - t3)


def bias_vector(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """H(q, qdot) = C(q, qdot) qdot + G(q)."""
    return coriolis_matrix(model, q, qdot) @ qdot + gravity_vector(model, q)


def potential_energy(model: RobotModel, q: np.ndarray) -> float:
    z = model.com_positions(q)[:, 1]
    return float(model.gravity * (model.masses @ z))


def kinetic_energy(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> float:
    return float(0.5 * qdot @ mass_matrix(model, q) @ qdot)


def total_energy(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> float:
    return kinetic_energy(model, q, qdot) + potential_energy(model, q)


def constraint_jacobian(
    model: RobotModel, q: np.ndarray, qdot: np.ndarray, cs: ConstraintSet
):
    """(J_h, Jdot_h) stacked per active frame/direction.

    An empty constraint set yields valid 0-row matrices.
    """
    q = model._check_q(q)
    n_h = cs.n_rows
    J = np.zeros((n_h, model.n))
    Jd = np.zeros((n_h, model.n))
    if n_h == 0:
        return J, Jd
    d, dp = model._trig(q)
    thdot = model.W @ np.asarray(qdot, dtype=float)
    row = 0
    for name, dirs in cs.frames:
        coef = model._frame_coef[name]
        Jf = model._coef_jacobian(coef, dp)
        Jfd = np.einsum("i,ia,ik->ak", -coef * thdot, d, model.W)
        li = model.contact_frames[name][0]
        for dr in dirs:
            if dr == "x":
                J[row], Jd[row] = Jf[0], Jfd[0]
            elif dr == "z":
                J[row], Jd[row] = Jf[1], Jfd[1]
            elif dr == "pitch":
                J[row] = model.W[li]
            else:
                raise ValueError(f"unknown constraint direction {dr!r}")
            row += 1
    return J, Jd


class _DynTerms:
    """All per-state dynamics blocks, computed once and shared.

    ``acc(u)`` gives the constrained acceleration, ``lam(u)`` the contact
    forces, both affine in u.
    """

    __slots__ = (
        "D", "Dcho", "H", "J", "Jdot", "Lam1", "Lam2",
        "a_f", "a_g", "lam_u", "lam_0", "n_h",
    )

    def acc(self, u: np.ndarray) -> np.ndarray:
        return self.a_f + self.a_g @ u

    def lam(self, u: np.ndarray) -> np.ndarray:
        return self.lam_0 + self.lam_u @ u


def dynamics_terms(
    model: RobotModel, q: np.ndarray, qdot: np.ndarray, cs: ConstraintSet
) -> _DynTerms:
    t = _DynTerms()
    t.D = mass_matrix(model, q)
    t.Dcho = cho_factor(t.D, lower=True)
    t.H = bias_vector(model, q, qdot)
    t.J, t.Jdot = constraint_jacobian(model, q, qdot, cs)
    t.n_h = cs.n_rows
    B = model.B
    if t.n_h == 0:
        t.Lam1 = np.zeros((0, model.n))
        t.Lam2 = np.zeros(0)
        DinvH = cho_solve(t.Dcho, t.H)
        t.a_f = -DinvH
        t.a_g = cho_solve(t.Dcho, B)
        t.lam_0 = np.zeros(0)
        t.lam_u = np.zeros((0, model.m))
        return t
    DinvJt = cho_solve(t.Dcho, t.J.T)            # n x n_h
    M = t.J @ DinvJt                             # J D^-1 J^T
    if np.linalg.cond(M) > _COND_LIMIT:
        raise SingularConstraintBlock(
            f"cond(J_h D^-1 J_h^T) exceeds {_COND_LIMIT:g}"
        )
    Minv = np.linalg.inv(M)
    t.Lam1 = Minv @ DinvJt.T                     # (J D^-1 J^T)^-1 J D^-1
    t.Lam2 = Minv @ (t.Jdot @ qdot)
    # Lambda = -Lam1 B u + Lam1 H - Lam2
    t.lam_u = -t.Lam1 @ B
    t.lam_0 = t.Lam1 @ t.H - t.Lam2
    proj = np.eye(model.n) - t.J.T @ t.Lam1      # (1 - J^T Lam1)
    t.a_f = -cho_solve(t.Dcho, proj @ t.H + t.J.T @ t.Lam2)
    t.a_g = cho_solve(t.Dcho, proj @ B)
    return t


def constraint_forces(
    model: RobotModel, x: State, u: np.ndarray, cs: ConstraintSet
) -> np.ndarray:
    """Explicit holonomic constraint forces for the given state and input."""
    t = dynamics_terms(model, x.q, x.qdot, cs)
    return t.lam(np.asarray(u, dtype=float))


def constrained_vector_field(
    model: RobotModel, x: State, u: np.ndarray, cs: ConstraintSet
):
    """State-space decomposition xdot = f(x) + g(x) u under active contacts.

    Returns (f_term (2n,), g_term (2n, m)).
    """
    t = dynamics_terms(model, x.q, x.qdot, cs)
    n = model.n
    f = np.concatenate([x.qdot, t.a_f])
    g = np.zeros((2 * n, model.m))
    g[n:] = t.a_g
    return f, g


def impact_map(
    model: RobotModel, q: np.ndarray, qdot_minus: np.ndarray, cs_new: ConstraintSet
):
    """Plastic impact: instantaneously activate ``cs_new`` contacts.

    Solves D (qd+ - qd-) = J^T dLam with J qd+ = 0.  Returns
    (qdot_plus, impulse, flags); flags contains NegativeNormalImpulse when a
    vertical impulse component is negative (non-physical pull contact).
    """
    q = model._check_q(q)
    qdot_minus = np.asarray(qdot_minus, dtype=float)
    J, _ = constraint_jacobian(model, q, qdot_minus, cs_new)
    if cs_new.n_rows == 0:
        return qdot_minus.copy(), np.zeros(0), []
    D = mass_matrix(model, q)
    Dcho = cho_factor(D, lower=True)
    DinvJt = cho_solve(Dcho, J.T)
    M = J @ DinvJt
    if np.linalg.cond(M) > _COND_LIMIT:
        raise SingularConstraintBlock("impact constraint block singular")
    impulse = -np.linalg.solve(M, J @ qdot_minus)
    qdot_plus = qdot_minus + DinvJt @ impulse
    flags = []
    for i in cs_new.normal_row_indices():
        if impulse[i] < 0:
            flags.append(FLAG_NEGATIVE_NORMAL_IMPULSE)
            break
    return qdot_plus, impulse, flags


def project_velocity(
    model: RobotModel, q: np.ndarray, qdot: np.ndarray, cs: ConstraintSet
) -> np.ndarray:
    """D-orthogonal projection of qdot onto null(J_h); drift control."""
    if cs.n_rows == 0:
        return np.asarray(qdot, dtype=float)
    qdot_plus, _, _ = impact_map(model, q, qdot, cs)
    return qdot_plus


def probe_bounds(
    model: RobotModel,
    q_samples: np.ndarray,
    qdot_samples: np.ndarray,
    cs: ConstraintSet | None = None,
) -> dict:
    """Empirical model constants over a sampled workspace.

    Reports the inertia-norm interval, the bias growth constant in
    ||H|| <= c_c (1 + |qdot|^2), the constraint Jacobian bounds and the
    contact-block norm interval, plus the skew-difference constant in
    ||Dd - C|| <= c_m |qdot|.
    """
    c_d_lo, c_d_hi = np.inf, 0.0
    c_c = 0.0
    c_h = 0.0
    c_hd = 0.0
    c_h_lo, c_h_hi = np.inf, 0.0
    c_m = 0.0
    for q, qd in zip(q_samples, qdot_samples):
        D = mass_matrix(model, q)
        ev = np.linalg.eigvalsh(D)
        c_d_lo = min(c_d_lo, ev[0])
        c_d_hi = max(c_d_hi, ev[-1])
        H = bias_vector(model, q, qd)
        c_c = max(c_c, np.linalg.norm(H) / (1.0 + qd @ qd))
        spd = np.linalg.norm(qd)
        if spd > 1e-12:
            C = coriolis_matrix(model, q, qd)
            dD = mass_matrix_gradient(model, q) @ qd
            c_m = max(c_m, np.linalg.norm(dD - C, 2) / spd)
        if cs is not None and cs.n_rows:
            J, Jd = constraint_jacobian(model, q, qd, cs)
            c_h = max(c_h, np.linalg.norm(J, 2))
            if spd > 1e-12:
                c_hd = max(c_hd, np.linalg.norm(Jd, 2) / spd)
            M = J @ np.linalg.solve(D, J.T)
            nm = np.linalg.norm(M, 2)
            c_h_lo = min(c_h_lo, nm)
            c_h_hi = max(c_h_hi, nm)
    out = {"c_d_lo": float(c_d_lo), "c_d_hi": float(c_d_hi), "c_c": float(c_c),
           "c_m": float(c_m)}
    if cs is not None and cs.n_rows:
        out.update(
            c_h=float(max(c_h, c_hd)),
            c_h_lo=float(c_h_lo),
            c_h_hi=float(c_h_hi),
        )
    return out
