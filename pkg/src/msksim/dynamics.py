"""Inverse dynamics over the body tree, GRF mapping and a forward-dynamics oracle.

Spatial vectors are 6-vectors ``[angular; linear]`` expressed in link
coordinates, with the linear part taken at the link origin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import link_poses, point_jacobian, rotation, rotation_jacobian
from .model import Model, _check_q

# CoP is only interpolated between samples carrying more than this load (N).
COP_MIN_FORCE = 5.0


@dataclass(frozen=True)
class ExternalWrench:
    """Force applied at a world point on a body, plus a free moment (world frame)."""

    body: str
    force: np.ndarray
    point: np.ndarray
    moment: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class FootRecord:
    applied_body: str
    force: np.ndarray  # (T, 3)
    cop: np.ndarray  # (T, 3)
    moment: np.ndarray  # (T, 3)


@dataclass
class GrfTrajectory:
    times: np.ndarray
    feet: dict  # side -> FootRecord

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        for side, rec in self.feet.items():
            if not np.all(np.isfinite(rec.force)):
                raise ValueError(f"non-finite force for side {side!r}")

    def frame(self, k) -> list:
        return [
            ExternalWrench(rec.applied_body, rec.force[k], rec.cop[k], rec.moment[k])
            for _, rec in sorted(self.feet.items())
        ]


@dataclass
class TorqueTrajectory:
    times: np.ndarray
    tau: np.ndarray
    names: list = field(default_factory=list)


def resample_grf(grf: GrfTrajectory, times) -> GrfTrajectory:
    """Linear interpolation of forces/moments/CoP onto ``times``.

    CoP is interpolated only when both neighbouring samples carry more than
    ``COP_MIN_FORCE``; with one loaded neighbour its CoP is used, otherwise
    the previous resampled CoP is held.
    """
    times = np.asarray(times, dtype=float)
    src = grf.times
    if times[0] < src[0] - 1e-6 or times[-1] > src[-1] + 1e-6:
        raise ValueError(f"GRF covers [{src[0]}, {src[-1]}] s, kinematics "
                         f"need [{times[0]}, {times[-1]}] s")
    tc = np.clip(times, src[0], src[-1])
    feet = {}
    for side, rec in grf.feet.items():
        force = np.column_stack([np.interp(tc, src, rec.force[:, k]) for k in range(3)])
        moment = np.column_stack([np.interp(tc, src, rec.moment[:, k]) for k in range(3)])
        mag = np.linalg.norm(rec.force, axis=1)
        cop = np.empty((len(tc), 3))
        held = rec.cop[0]
        for i, t in enumerate(tc):
            j = int(np.clip(np.searchsorted(src, t, side="right") - 1, 0, len(src) - 1))
            k = min(j + 1, len(src) - 1)
            loaded_j, loaded_k = mag[j] > COP_MIN_FORCE, mag[k] > COP_MIN_FORCE
            if loaded_j and loaded_k:
                w = 0.0 if k == j else (t - src[j]) / (src[k] - src[j])
                c = (1 - w) * rec.cop[j] + w * rec.cop[k]
            elif loaded_j or loaded_k:
                c = rec.cop[j] if loaded_j else rec.cop[k]
            else:
                c = held
            cop[i] = c
            held = c
        feet[side] = FootRecord(rec.applied_body, force, cop, moment)
    return GrfTrajectory(times.copy(), feet)


# -- spatial algebra ----------------------------------------------------------


def _crm(v, u):
    w, vo = v[:3], v[3:]
    return np.concatenate([np.cross(w, u[:3]), np.cross(w, u[3:]) + np.cross(vo, u[:3])])


def _crf(v, f):
    w, vo = v[:3], v[3:]
    return np.concatenate([np.cross(w, f[:3]) + np.cross(vo, f[3:]), np.cross(w, f[3:])])


def _spatial_inertia(mass, com, Ic):
    cx = np.array([[0.0, -com[2], com[1]], [com[2], 0.0, -com[0]], [-com[1], com[0], 0.0]])
    I = np.zeros((6, 6))
    I[:3, :3] = Ic + mass * cx @ cx.T
    I[:3, 3:] = mass * cx
    I[3:, :3] = mass * cx.T
    I[3:, 3:] = mass * np.eye(3)
    return I


def _link_transforms(model, q):
    """Per link: rotation E (child axes in parent) and child origin r in parent."""
    out = []
    for link in model.links:
        if link.kind == "revolute":
            E = rotation(link.axis, q[link.dof])
            r = np.asarray(link.offset)
        elif link.kind == "prismatic":
            E = np.eye(3)
            r = link.offset + link.axis * q[link.dof]
        else:
            E = np.eye(3)
            r = np.asarray(link.offset)
        out.append((E, r))
    return out


def _motion_to_child(E, r, m):
    w, v = m[:3], m[3:]
    return np.concatenate([E.T @ w, E.T @ (v + np.cross(w, r))])


def _force_to_parent(E, r, f):
    n, fl = E @ f[:3], E @ f[3:]
    return np.concatenate([n + np.cross(r, fl), fl])


def _motion_subspace(link):
    s = np.zeros(6)
    if link.kind == "revolute":
        s[:3] = link.axis
    elif link.kind == "prismatic":
        s[3:] = link.axis
    return s


def _rnea(model, q, qdot, qddot, gravity, external=()):
    links = model.links
    n = len(links)
    X = _link_transforms(model, q)
    v = np.zeros((n, 6))
    a = np.zeros((n, 6))
    f = np.zeros((n, 6))
    a_world = np.concatenate([np.zeros(3), -np.asarray(gravity, dtype=float)])

    fext = np.zeros((n, 6))
    if external:
        Rw, pw = link_poses(model, q)
        bidx = model.body_index
        for w in external:
            if w.body not in bidx:
                raise ValueError(f"external load on unknown body {w.body!r}")
            li = model.body_link[bidx[w.body]]
            F = np.asarray(w.force, dtype=float)
            n_world = np.asarray(w.moment, dtype=float) + np.cross(np.asarray(w.point) - pw[li], F)
            fext[li, :3] += Rw[li].T @ n_world
            fext[li, 3:] += Rw[li].T @ F

    S = [_motion_subspace(link) for link in links]
    for i, link in enumerate(links):
        E, r = X[i]
        vp = np.zeros(6) if link.parent < 0 else v[link.parent]
        ap = a_world if link.parent < 0 else a[link.parent]
        vi = _motion_to_child(E, r, vp)
        ai = _motion_to_child(E, r, ap)
        if link.dof >= 0:
            vj = S[i] * qdot[link.dof]
            vi = vi + vj
            ai = ai + S[i] * qddot[link.dof] + _crm(vi, vj)
        v[i], a[i] = vi, ai
        if link.mass > 0 or np.any(link.inertia):
            I = _spatial_inertia(link.mass, link.com, link.inertia)
            f[i] = I @ ai + _crf(vi, I @ vi)
        f[i] -= fext[i]

    tau = np.zeros(model.ndof)
    for i in range(n - 1, -1, -1):
        link = links[i]
        if link.dof >= 0:
            tau[link.dof] = S[i] @ f[i]
        if link.parent >= 0:
            E, r = X[i]
            f[link.parent] += _force_to_parent(E, r, f[i])
    return tau


def _check_state(model, q, *vecs):
    q = _check_q(model, q)
    out = [q]
    for x in vecs:
        x = np.asarray(x, dtype=float)
        if x.shape != q.shape:
            raise ValueError(f"expected {model.ndof} values, got shape {x.shape}")
        out.append(x)
    return out


def inverse_dynamics(model: Model, q, qdot, qddot, external=(), gravity=None) -> np.ndarray:
    """Generalized forces realizing ``(q, qdot, qddot)`` under gravity and external loads."""
    q, qdot, qddot = _check_state(model, q, qdot, qddot)
    g = model.gravity if gravity is None else gravity
    return _rnea(model, q, qdot, qddot, g, external)


def bias_forces(model: Model, q, qdot, external=()):
    """Inverse dynamics at zero acceleration (Coriolis, centrifugal, gravity, loads)."""
    return inverse_dynamics(model, q, qdot, np.zeros(model.ndof), external)


def mass_matrix(model: Model, q) -> np.ndarray:
    q = _check_q(model, q)
    n = model.ndof
    zeros = np.zeros(n)
    g0 = np.zeros(3)
    base = _rnea(model, q, zeros, zeros, g0)
    M = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        M[:, j] = _rnea(model, q, zeros, e, g0) - base
    return 0.5 * (M + M.T)


def forward_dynamics(model: Model, q, qdot, tau, external=()) -> np.ndarray:
    """Accelerations solving ``M qddot = tau + J^T w - bias``."""
    q, qdot, tau = _check_state(model, q, qdot, tau)
    M = mass_matrix(model, q)
    rhs = tau + grf_to_generalized(model, q, external) - bias_forces(model, q, qdot)
    L = np.linalg.cholesky(M)
    return np.linalg.solve(L.T, np.linalg.solve(L, rhs))


def grf_to_generalized(model: Model, q, wrenches) -> np.ndarray:
    """Map world-frame external wrenches to generalized forces via Jacobian transposes."""
    q = _check_q(model, q)
    out = np.zeros(model.ndof)
    if not wrenches:
        return out
    R, p = link_poses(model, q)
    bidx = model.body_index
    for w in wrenches:
        if w.body not in bidx:
            raise ValueError(f"external load on unknown body {w.body!r}")
        b = bidx[w.body]
        Jp = point_jacobian(model, b, np.asarray(w.point, dtype=float), R, p)
        Jr = rotation_jacobian(model, b, R)
        out += Jp.T @ np.asarray(w.force, dtype=float) + Jr.T @ np.asarray(w.moment, dtype=float)
    return out


def center_of_mass_jacobians(model: Model, q):
    """Per body: (mass, world COM, COM Jacobian)."""
    q = _check_q(model, q)
    R, p = link_poses(model, q)
    out = []
    for b, body in enumerate(model.bodies):
        li = model.body_link[b]
        c = R[li] @ body.com_local + p[li]
        out.append((body.mass, c, point_jacobian(model, b, c, R, p)))
    return out


def kinetic_energy(model: Model, q, qdot) -> float:
    M = mass_matrix(model, q)
    return 0.5 * float(qdot @ M @ qdot)


def potential_energy(model: Model, q) -> float:
    g = model.gravity
    return -sum(m * float(g @ c) for m, c, _ in center_of_mass_jacobians(model, q))
