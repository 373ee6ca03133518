"""Forward kinematics, virtual markers, marker-based IK and differentiation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import Model, _check_q

log = logging.getLogger(__name__)


def skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def rotation(axis, angle):
    """Rotation matrix about a unit ``axis`` (Rodrigues)."""
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


# -- trajectories -----------------------------------------------------------


@dataclass
class KinematicTrajectory:
    times: np.ndarray
    q: np.ndarray
    qdot: np.ndarray
    qddot: np.ndarray
    names: list = field(default_factory=list)

    @property
    def frame_rate(self) -> float:
        t = self.times
        return (len(t) - 1) / (t[-1] - t[0]) if len(t) > 1 else float("nan")

    def check(self):
        t = np.asarray(self.times)
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if not (self.q.shape == self.qdot.shape == self.qddot.shape):
            raise ValueError("q, qdot and qddot must share a shape")
        if len(t) > 1:
            fr = self.frame_rate
            grid = t[0] + np.arange(len(t)) / fr
            if np.abs(grid - t).max() > 1e-6:
                raise ValueError("times are not uniformly sampled at the frame rate")
        return self


@dataclass
class MarkerTrajectory:
    times: np.ndarray
    names: list
    positions: np.ndarray  # (T, M, 3) in meters
    validity: np.ndarray  # (T, M) bool

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.validity is None:
            self.validity = np.all(np.isfinite(self.positions), axis=2)
        self.validity = np.asarray(self.validity, dtype=bool)
        if len(set(self.names)) != len(self.names):
            raise ValueError("marker names must be unique")
        if self.positions.shape != (len(self.times), len(self.names), 3):
            raise ValueError(f"positions shape {self.positions.shape} does not match "
                             f"{len(self.times)} frames x {len(self.names)} markers")
        if not np.all(np.isfinite(self.positions[self.validity])):
            raise ValueError("valid marker samples must be finite")


@dataclass
class IkDiagnostics:
    rms_marker_error: np.ndarray
    max_marker_error: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    failed_frames: list = field(default_factory=list)
    messages: dict = field(default_factory=dict)

    @property
    def sequence_max_marker_error(self) -> float:
        e = self.max_marker_error[np.isfinite(self.max_marker_error)]
        return float(e.max()) if e.size else float("nan")


# -- forward kinematics ------------------------------------------------------


def link_poses(model: Model, q):
    """World rotation and origin of every elementary link frame."""
    links = model.links
    R = np.empty((len(links), 3, 3))
    p = np.empty((len(links), 3))
    for i, link in enumerate(links):
        if link.parent < 0:
            Rp, pp = np.eye(3), np.zeros(3)
        else:
            Rp, pp = R[link.parent], p[link.parent]
        pi = pp + Rp @ link.offset
        if link.kind == "revolute":
            Ri = Rp @ rotation(link.axis, q[link.dof])
        elif link.kind == "prismatic":
            Ri = Rp
            pi = pi + Rp @ (link.axis * q[link.dof])
        else:
            Ri = Rp
        R[i], p[i] = Ri, pi
    return R, p


def body_poses(model: Model, q):
    R, p = link_poses(model, q)
    bl = list(model.body_link)
    return R[bl], p[bl]


def forward_kinematics(model: Model, q) -> dict:
    """World pose ``(R, p)`` of every body, keyed by body name."""
    q = _check_q(model, q)
    R, p = body_poses(model, q)
    return {b.name: (R[i], p[i]) for i, b in enumerate(model.bodies)}


def place_markers(model: Model, q, names=None) -> np.ndarray:
    """World positions (M, 3) of model markers (all, or those in ``names``)."""
    q = _check_q(model, q)
    R, p = body_poses(model, q)
    idx = model.body_index
    markers = model.markers if names is None else [_marker(model, n) for n in names]
    out = np.zeros((len(markers), 3))
    for k, mk in enumerate(markers):
        if mk.body not in idx:
            raise ValueError(f"marker {mk.name!r} is on unknown body {mk.body!r}")
        b = idx[mk.body]
        out[k] = R[b] @ mk.local_offset + p[b]
    return out


def _marker(model, name):
    for mk in model.markers:
        if mk.name == name:
            return mk
    raise ValueError(f"unknown marker {name!r}")


def point_jacobian(model: Model, body: int, point, link_R, link_p) -> np.ndarray:
    """Jacobian (3, DOF) of a world point rigidly attached to ``body``."""
    J = np.zeros((3, model.ndof))
    for li in model.link_ancestors[model.body_link[body]]:
        link = model.links[li]
        if link.dof < 0:
            continue
        a = link_R[li] @ link.axis
        if link.kind == "revolute":
            J[:, link.dof] = np.cross(a, point - link_p[li])
        else:
            J[:, link.dof] = a
    return J


def rotation_jacobian(model: Model, body: int, link_R) -> np.ndarray:
    """Angular-velocity Jacobian (3, DOF) of ``body``."""
    J = np.zeros((3, model.ndof))
    for li in model.link_ancestors[model.body_link[body]]:
        link = model.links[li]
        if link.kind == "revolute":
            J[:, link.dof] = link_R[li] @ link.axis
    return J


def marker_jacobian(model: Model, q, marker_idx) -> np.ndarray:
    """Stacked (3M, DOF) Jacobian of the selected model markers."""
    R, p = link_poses(model, q)
    bidx = model.body_index
    rows = []
    for k in marker_idx:
        mk = model.markers[k]
        b = bidx[mk.body]
        bl = model.body_link[b]
        x = R[bl] @ mk.local_offset + p[bl]
        rows.append(point_jacobian(model, b, x, R, p))
    return np.vstack(rows) if rows else np.zeros((0, model.ndof))


# -- inverse kinematics ------------------------------------------------------

IK_MAX_ITERATIONS = 100
IK_LAMBDA0 = 1e-3
IK_STEP_TOL = 1e-10
IK_DECREASE_TOL = 1e-14


def _marker_positions(model, q, marker_idx):
    R, p = body_poses(model, q)
    bidx = model.body_index
    out = np.empty((len(marker_idx), 3))
    for j, k in enumerate(marker_idx):
        mk = model.markers[k]
        b = bidx[mk.body]
        out[j] = R[b] @ mk.local_offset + p[b]
    return out


def solve_ik_frame(model: Model, observed, marker_idx, weights, q0,
                   max_iterations=IK_MAX_ITERATIONS):
    """Damped Gauss-Newton fit of one frame.

    Returns ``(q, converged, iterations, objective_history)``; the history
    holds the weighted objective at every accepted iterate.
    """
    q = np.array(q0, dtype=float)
    w3 = np.repeat(weights, 3)
    obs = np.asarray(observed, dtype=float).ravel()

    def objective(qq):
        r = _marker_positions(model, qq, marker_idx).ravel() - obs
        return float(np.sum(w3 * r * r)), r

    f, r = objective(q)
    history = [f]
    lam = IK_LAMBDA0
    n = model.ndof
    for it in range(1, max_iterations + 1):
        J = marker_jacobian(model, q, marker_idx)
        JtW = J.T * w3
        H = JtW @ J
        g = JtW @ r
        while True:
            step = np.linalg.solve(H + lam * np.eye(n), -g)
            if np.linalg.norm(step) < IK_STEP_TOL:
                return q, True, it, history
            f_new, r_new = objective(q + step)
            if f_new < f:
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
            if lam > 1e16:
                return q, True, it, history
        decrease = f - f_new
        q, f, r = q + step, f_new, r_new
        history.append(f)
        if np.linalg.norm(step) < IK_STEP_TOL or decrease < IK_DECREASE_TOL:
            return q, True, it, history
    return q, False, max_iterations, history


def inverse_kinematics(model: Model, markers: MarkerTrajectory, q0=None,
                       max_iterations=IK_MAX_ITERATIONS):
    """Fit coordinates to a marker trajectory, frame by frame with warm start.

    Frames with no valid marker, or that fail to converge, are reported in
    the diagnostics; the previous frame's coordinates (or the last iterate)
    are kept so the trajectory stays complete.
    """
    n = model.ndof
    q_prev = np.zeros(n) if q0 is None else _check_q(model, q0).copy()
    lookup = {name: k for k, name in enumerate(model.marker_names)}
    cols = [j for j, name in enumerate(markers.names) if name in lookup]
    if not cols:
        raise ValueError("no trajectory marker matches a model marker")
    model_idx = np.array([lookup[markers.names[j]] for j in cols])
    weights_all = np.array([model.markers[k].weight for k in model_idx])

    T = len(markers.times)
    Q = np.zeros((T, n))
    rms = np.full(T, np.nan)
    mx = np.full(T, np.nan)
    iters = np.zeros(T, dtype=int)
    conv = np.zeros(T, dtype=bool)
    failed, messages = [], {}
    for t in range(T):
        valid = markers.validity[t, cols]
        if not valid.any():
            failed.append(t)
            messages[t] = "no valid markers"
            Q[t] = q_prev
            continue
        idx = model_idx[valid]
        obs = markers.positions[t, np.array(cols)[valid]]
        q, ok, it, _ = solve_ik_frame(model, obs, idx, weights_all[valid], q_prev, max_iterations)
        err = np.linalg.norm(_marker_positions(model, q, idx) - obs, axis=1)
        rms[t] = float(np.sqrt(np.mean(err ** 2)))
        mx[t] = float(err.max())
        iters[t], conv[t] = it, ok
        if not ok:
            failed.append(t)
            messages[t] = f"not converged after {it} iterations"
            log.warning("IK frame %d did not converge", t)
        Q[t] = q
        q_prev = q
    if T >= 3:
        qd, qdd = differentiate(markers.times, Q)
    else:
        qd, qdd = np.zeros_like(Q), np.zeros_like(Q)
    traj = KinematicTrajectory(markers.times.copy(), Q, qd, qdd, list(model.dof_names))
    return traj, IkDiagnostics(rms, mx, iters, conv, failed, messages)


# -- differentiation ---------------------------------------------------------


def differentiate(times, q):
    """First and second time derivatives of ``q`` (T, ...) along axis 0.

    Velocities use second-order central differences inside and second-order
    one-sided stencils at the ends (exact for quadratics everywhere).
    Accelerations use the three-point second-difference stencil; the end
    frames reuse the stencil of their nearest interior neighbour.
    """
    t = np.asarray(times, dtype=float)
    q = np.asarray(q, dtype=float)
    if len(t) < 3:
        raise ValueError("differentiation needs at least 3 frames")
    if np.any(np.diff(t) <= 0):
        raise ValueError("times must be strictly increasing")
    qdot = np.gradient(q, t, axis=0, edge_order=2)
    h = np.diff(t)
    h0 = h[:-1].reshape((-1,) + (1,) * (q.ndim - 1))
    h1 = h[1:].reshape(h0.shape)
    inner = 2.0 * (h0 * (q[2:] - q[1:-1]) - h1 * (q[1:-1] - q[:-2])) / (h0 * h1 * (h0 + h1))
    qddot = np.empty_like(q)
    qddot[1:-1] = inner
    qddot[0] = inner[0]
    qddot[-1] = inner[-1]
    return qdot, qddot
