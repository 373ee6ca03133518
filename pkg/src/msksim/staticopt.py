"""Per-frame effort-minimizing muscle recruitment.

At each frame we minimize::

    sum_i a_i**p + w_res * sum_j (tau_res_j / tau_opt_j)**2
    s.t. tau = A a + tau_res,  0 <= a <= 1

with ``A = R(q) diag(phi(q, qdot))``. Eliminating the free reserves leaves a
smooth problem in ``a`` over the unit box.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .model import Model, force_factors, moment_arms

log = logging.getLogger(__name__)

# Frames are solved in fixed blocks; warm starts never cross a block boundary,
# so results do not depend on the number of workers.
BLOCK_SIZE = 32


@dataclass(frozen=True)
class SoConfig:
    p: float = 2.0
    reserve_weight: float = 1000.0
    max_iterations: int = 2000
    tolerance: float = 1e-12

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError(f"activation exponent p must be >= 1, got {self.p}")
        if not self.reserve_weight > 0:
            raise ValueError("reserve_weight must be > 0")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be > 0")
        if not self.max_iterations >= 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class SoFrameSolution:
    activations: np.ndarray
    reserve_torques: np.ndarray
    constraint_violation: float
    objective_value: float
    converged: bool
    iterations: int = 0
    kkt: float = float("nan")


@dataclass
class ActivationTrajectory:
    times: np.ndarray
    activations: np.ndarray
    muscle_names: list
    flags: list = field(default_factory=list)


@dataclass
class SoDiagnostics:
    frames: list

    @property
    def max_constraint_violation(self) -> float:
        return float(max(f.constraint_violation for f in self.frames))

    @property
    def flagged_frames(self) -> list:
        return [k for k, f in enumerate(self.frames) if not f.converged]


class _Problem:
    """Reduced objective in the activations for one frame."""

    def __init__(self, A, tau, tau_opt, p, w):
        self.A = np.asarray(A, dtype=float)
        self.tau = np.asarray(tau, dtype=float)
        self.tau_opt = np.asarray(tau_opt, dtype=float)
        self.p = float(p)
        self.w = float(w)
        self.B = self.A / self.tau_opt[:, None]
        self.c = self.tau / self.tau_opt
        self.G = 2.0 * self.w * (self.B.T @ self.B)
        self.h = 2.0 * self.w * (self.B.T @ self.c)
        curv = 2.0 if self.p == 2 else max(self.p * (self.p - 1.0), 1.0)
        self.L = curv + (np.linalg.norm(self.G, 2) if self.G.size else 0.0)

    def reserves(self, a):
        return self.tau - self.A @ a

    def value(self, a):
        r = (self.c - self.B @ a)
        return float(np.sum(a ** self.p) + self.w * (r @ r))

    def grad(self, a):
        if self.p == 2:
            eff = 2.0 * a
        elif self.p == 1:
            eff = np.ones_like(a)
        else:
            eff = self.p * a ** (self.p - 1.0)
        return eff + self.G @ a - self.h

    def hess_diag(self, a):
        if self.p == 2:
            return np.full_like(a, 2.0)
        if self.p == 1:
            return np.zeros_like(a)
        with np.errstate(divide="ignore"):
            return self.p * (self.p - 1.0) * np.where(a > 0, a, np.inf) ** (self.p - 2.0)

    def stationarity(self, a, g=None):
        """Gradient-mapping norm ``||a - P(a - g/L)||_inf`` (activation units)."""
        g = self.grad(a) if g is None else g
        return float(np.max(np.abs(a - np.clip(a - g / self.L, 0.0, 1.0)), initial=0.0))


def _minimize(prob: _Problem, a0, tol, max_iterations):
    """Projected gradient with Barzilai-Borwein steps plus projected-Newton polishing.

    The Newton step acts on the variables not pinned at a bound by the
    current gradient; it makes the quadratic case terminate on the exact
    optimum once the active set is identified.
    """
    n = len(a0)
    x = np.clip(np.asarray(a0, dtype=float), 0.0, 1.0)
    if n == 0:
        return x, True, 0
    f = prob.value(x)
    g = prob.grad(x)
    step = 1.0 / prob.L
    for it in range(1, max_iterations + 1):
        if prob.stationarity(x, g) <= tol:
            return x, True, it - 1

        # projected Newton candidate
        eps = min(1e-6, float(np.max(np.abs(x - np.clip(x - g, 0.0, 1.0)))))
        active = ((x <= eps) & (g > 0)) | ((x >= 1.0 - eps) & (g < 0))
        free = ~active
        x_new = None
        if free.any():
            H = prob.G[np.ix_(free, free)] + np.diag(prob.hess_diag(x)[free])
            if np.all(np.isfinite(H)):
                try:
                    d = np.zeros(n)
                    d[free] = np.linalg.solve(H + 1e-14 * np.eye(free.sum()), g[free])
                    d[active] = g[active] / prob.L
                    # full step first; near the optimum f is flat to rounding, so a
                    # full step that lowers stationarity without raising f beyond
                    # rounding is taken too
                    cand = np.clip(x - d, 0.0, 1.0)
                    fc = prob.value(cand)
                    if fc <= f + 1e-4 * g @ (cand - x) or (
                            fc <= f + 1e-13 * max(1.0, abs(f))
                            and prob.stationarity(cand) < prob.stationarity(x, g)):
                        x_new = cand
                    alpha = 0.5
                    for _ in range(40):
                        if x_new is not None:
                            break
                        cand = np.clip(x - alpha * d, 0.0, 1.0)
                        if prob.value(cand) <= f + 1e-4 * g @ (cand - x):
                            x_new = cand
                        alpha *= 0.5
                except np.linalg.LinAlgError:
                    x_new = None

        if x_new is None:
            # projected BB gradient step with Armijo backtracking
            s_len = step
            for _ in range(60):
                cand = np.clip(x - s_len * g, 0.0, 1.0)
                fc = prob.value(cand)
                if fc <= f + 1e-4 * g @ (cand - x) or s_len <= 1.0 / prob.L:
                    break
                s_len *= 0.5
            x_new = cand

        g_new = prob.grad(x_new)
        s = x_new - x
        y = g_new - g
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else 1.0 / prob.L
        step = min(max(step, 1e-3 / prob.L), 1e12)
        if np.array_equal(x_new, x):
            # no representable progress
            return x, prob.stationarity(x, g) <= tol, it
        x, g, f = x_new, g_new, prob.value(x_new)
    return x, prob.stationarity(x, g) <= tol, max_iterations


def frame_problem(model: Model, q, qdot, tau_required, config: SoConfig):
    R = moment_arms(model, q)
    phi = force_factors(model, q, qdot, R)
    return _Problem(R * phi[None, :], tau_required, model.reserve_optimal_force,
                    config.p, config.reserve_weight)


def _solve(prob: _Problem, config: SoConfig, a0=None) -> SoFrameSolution:
    n = prob.A.shape[1]
    a0 = np.zeros(n) if a0 is None else a0
    a, ok, it = _minimize(prob, a0, config.tolerance, config.max_iterations)
    a = np.clip(a, 0.0, 1.0)
    res = prob.reserves(a)
    violation = float(np.max(np.abs(prob.tau - (prob.A @ a + res)), initial=0.0))
    return SoFrameSolution(
        activations=a,
        reserve_torques=res,
        constraint_violation=violation,
        objective_value=prob.value(a),
        converged=bool(ok),
        iterations=it,
        kkt=prob.stationarity(a),
    )


def solve_frame(model: Model, q, qdot, tau_required, config: SoConfig = SoConfig(),
                a0=None) -> SoFrameSolution:
    tau_required = np.asarray(tau_required, dtype=float)
    if tau_required.shape != (model.ndof,):
        raise ValueError(f"expected {model.ndof} torques, got shape {tau_required.shape}")
    prob = frame_problem(model, q, qdot, tau_required, config)
    sol = _solve(prob, config, a0)
    if not sol.converged:
        log.warning("static optimization did not converge (stationarity %.3g)", sol.kkt)
    return sol


def kkt_residual(model: Model, q, qdot, tau, solution: SoFrameSolution,
                 config: SoConfig = SoConfig()) -> float:
    """Largest of stationarity, bound feasibility and equality residuals.

    Stationarity is the projected-gradient mapping, which also measures
    complementary slackness at the bounds.
    """
    prob = frame_problem(model, q, qdot, tau, config)
    a = np.asarray(solution.activations, dtype=float)
    bounds = float(np.max(np.maximum(-a, a - 1.0), initial=0.0))
    eq = float(np.max(np.abs(prob.tau - prob.A @ a - solution.reserve_torques), initial=0.0))
    # stationarity w.r.t. the given reserves: 2 w tau_res / tau_opt^2 must equal the multiplier
    lam = 2.0 * prob.w * np.asarray(solution.reserve_torques) / prob.tau_opt ** 2
    eff = prob.grad(a) - prob.G @ a + prob.h  # effort part only
    g = eff - prob.A.T @ lam
    stat = float(np.max(np.abs(a - np.clip(a - g / prob.L, 0.0, 1.0)), initial=0.0))
    return max(bounds, eq, stat)


def _solve_block(args):
    model, Q, Qd, Tau, config, warm = args
    out = []
    a_prev = None
    for k in range(len(Q)):
        prob = frame_problem(model, Q[k], Qd[k], Tau[k], config)
        sol = _solve(prob, config, a_prev if warm else None)
        out.append(sol)
        a_prev = sol.activations
    return out


def solve_sequence(model: Model, traj, torques, config: SoConfig = SoConfig(),
                   jobs: int = 1, warm_start: bool = True):
    """Solve every frame independently; returns ``(ActivationTrajectory, SoDiagnostics)``."""
    times = np.asarray(traj.times, dtype=float)
    if len(times) != len(torques.times) or np.max(np.abs(times - torques.times), initial=0) > 1e-6:
        raise ValueError("kinematic and torque timestamps are not aligned")
    T = len(times)
    blocks = [(model, traj.q[s:s + BLOCK_SIZE], traj.qdot[s:s + BLOCK_SIZE],
               torques.tau[s:s + BLOCK_SIZE], config, warm_start)
              for s in range(0, T, BLOCK_SIZE)]
    if jobs > 1 and len(blocks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_solve_block, blocks))
    else:
        results = [_solve_block(b) for b in blocks]
    frames = [s for block in results for s in block]
    for k, s in enumerate(frames):
        if not s.converged:
            log.warning("static optimization frame %d flagged (not converged)", k)
    acts = np.array([s.activations for s in frames]).reshape(T, model.n_muscles)
    return (ActivationTrajectory(times.copy(), acts, list(model.muscle_names)),
            SoDiagnostics(frames))
