"""Synthetic ground truth: smooth random motion, markers, GRF and min-effort activations."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .dynamics import (
    ExternalWrench,
    FootRecord,
    GrfTrajectory,
    TorqueTrajectory,
    center_of_mass_jacobians,
    inverse_dynamics,
)
from .kinematics import KinematicTrajectory, MarkerTrajectory, forward_kinematics, place_markers
from .model import Model, check_model
from .staticopt import ActivationTrajectory, SoConfig, solve_sequence

KNOT_INTERVAL = 1.0  # s between random spline knots
RANGE_MARGIN = 0.1  # knots avoid the outer 10% of each joint range
COM_STEP = 1e-4  # s, time step of the COM acceleration stencil


@dataclass
class SynthResult:
    kinematics: KinematicTrajectory
    markers: MarkerTrajectory
    grf: GrfTrajectory | None
    torques: TorqueTrajectory
    activations: ActivationTrajectory
    so_diagnostics: object


def random_motion(model: Model, duration, frame_rate, seed, knot_interval=KNOT_INTERVAL):
    """Clamped cubic spline through seeded random knots inside the joint ranges.

    Returns the trajectory sampled at ``frame_rate`` plus the spline itself.
    """
    if not duration > 0:
        raise ValueError("duration must be > 0")
    if not frame_rate > 0:
        raise ValueError("frame_rate must be > 0")
    rng = np.random.default_rng(seed)
    n_frames = int(round(duration * frame_rate)) + 1
    times = np.arange(n_frames) / frame_rate
    n_knots = max(2, int(np.ceil(duration / knot_interval)) + 1)
    t_knots = np.linspace(0.0, times[-1], n_knots)
    ranges = model.dof_ranges()
    lo = ranges[:, 0] + RANGE_MARGIN * (ranges[:, 1] - ranges[:, 0])
    hi = ranges[:, 1] - RANGE_MARGIN * (ranges[:, 1] - ranges[:, 0])
    knots = lo + (hi - lo) * rng.random((n_knots, model.ndof))
    spline = CubicSpline(t_knots, knots, axis=0, bc_type="clamped")
    traj = KinematicTrajectory(times, spline(times), spline(times, 1), spline(times, 2),
                               list(model.dof_names))
    return traj, spline


def _ground_basis(up):
    e1 = np.cross(up, [1.0, 0.0, 0.0])
    if np.linalg.norm(e1) < 1e-6:
        e1 = np.cross(up, [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(up, e1)


def static_grf(model: Model, spline, times) -> GrfTrajectory | None:
    """GRF carrying the whole-body weight plus COM inertia, CoP under the contact bodies.

    The total force ``M (a_com - g)`` is split evenly across the model's
    contact bodies. Each CoP starts at its body origin projected onto the
    ground plane through the world origin; a common in-plane CoP shift and a
    free moment about the vertical are then fitted (minimum-norm least
    squares) so the unactuated root coordinates need no residual torque.
    """
    if not model.contact_bodies:
        return None
    g = model.gravity
    up = -g / np.linalg.norm(g)
    e1, e2 = _ground_basis(up)
    M = model.total_mass
    n_root = model.bodies[0].ndof

    def com(t):
        parts = center_of_mass_jacobians(model, spline(t))
        return sum(m * c for m, c, _ in parts) / M

    sides = sorted(model.contact_bodies)
    T = len(times)
    force = np.zeros((T, 3))
    cops = {s: np.zeros((T, 3)) for s in sides}
    moments = np.zeros((T, 3))
    h = COM_STEP
    for k, t in enumerate(times):
        q, qd, qdd = spline(t), spline(t, 1), spline(t, 2)
        a_com = (com(t + h) - 2.0 * com(t) + com(t - h)) / (h * h)
        force[k] = M * (a_com - g) / len(sides)
        poses = forward_kinematics(model, q)
        base = {}
        for s in sides:
            p = poses[model.contact_bodies[s]][1]
            base[s] = p - (p @ up) * up

        def residual(x):
            shift = x[0] * e1 + x[1] * e2
            ext = [ExternalWrench(model.contact_bodies[s], force[k], base[s] + shift,
                                  x[2] * up / len(sides)) for s in sides]
            return inverse_dynamics(model, q, qd, qdd, ext)[:n_root]

        x = np.zeros(3)
        if n_root:
            r0 = residual(x)
            J = np.column_stack([residual(e) - r0 for e in np.eye(3)])  # exact: residual is affine
            x = -np.linalg.lstsq(J, r0, rcond=1e-10)[0]
        for s in sides:
            cops[s][k] = base[s] + x[0] * e1 + x[1] * e2
        moments[k] = x[2] * up / len(sides)
    feet = {s: FootRecord(model.contact_bodies[s], force.copy(), cops[s], moments.copy())
            for s in sides}
    return GrfTrajectory(np.asarray(times, dtype=float).copy(), feet)


def synthesize(model: Model, duration, frame_rate, seed, config: SoConfig = SoConfig(),
               knot_interval=KNOT_INTERVAL) -> SynthResult:
    check_model(model)
    traj, spline = random_motion(model, duration, frame_rate, seed, knot_interval)
    grf = static_grf(model, spline, traj.times)
    tau = np.zeros_like(traj.q)
    for k in range(len(traj.times)):
        ext = grf.frame(k) if grf is not None else ()
        tau[k] = inverse_dynamics(model, traj.q[k], traj.qdot[k], traj.qddot[k], ext)
    torques = TorqueTrajectory(traj.times.copy(), tau, list(model.dof_names))
    acts, diag = solve_sequence(model, traj, torques, config, warm_start=False)
    pos = np.array([place_markers(model, q) for q in traj.q])
    markers = MarkerTrajectory(traj.times.copy(), list(model.marker_names), pos,
                               np.ones(pos.shape[:2], dtype=bool))
    return SynthResult(traj, markers, grf, torques, acts, diag)
