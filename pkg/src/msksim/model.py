"""Musculoskeletal model: rigid-body tree, Hill muscles, markers, scaling.

A model is a tree of :class:`BodySegment` objects, each connected to its parent
(or to the world, for the root) by a joint. Internally every joint is expanded
into a chain of elementary one-axis links (revolute, prismatic or fixed), which
is what kinematics and dynamics iterate over.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

JOINT_TYPES = ("revolute", "prismatic", "free-planar", "free", "fixed")
JOINT_DOFS = {"revolute": 1, "prismatic": 1, "free-planar": 3, "free": 6, "fixed": 0}

# Force-velocity multiplier bounds of the clamped linear curve.
FV_MIN = 0.1
FV_MAX = 1.5


def _frozen_array(x, shape=None):
    a = np.array(x, dtype=float)
    if shape is not None:
        a = a.reshape(shape)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class BodySegment:
    name: str
    parent: str | None
    joint_type: str = "revolute"
    joint_axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    offset_in_parent: np.ndarray = field(default_factory=lambda: np.zeros(3))
    mass: float = 1.0
    com_local: np.ndarray = field(default_factory=lambda: np.zeros(3))
    inertia_local: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    # (lo, hi) per DOF of the joint; used by the synthetic generator only
    joint_range: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "joint_axis", _frozen_array(self.joint_axis))
        object.__setattr__(self, "offset_in_parent", _frozen_array(self.offset_in_parent))
        object.__setattr__(self, "com_local", _frozen_array(self.com_local))
        object.__setattr__(self, "inertia_local", _frozen_array(self.inertia_local))
        object.__setattr__(self, "mass", float(self.mass))
        if self.joint_range is not None:
            object.__setattr__(
                self, "joint_range", tuple((float(lo), float(hi)) for lo, hi in self.joint_range)
            )

    @property
    def ndof(self) -> int:
        return JOINT_DOFS.get(self.joint_type, 0)


@dataclass(frozen=True)
class HillMuscleParams:
    """Rigid-tendon Hill muscle.

    ``fl_width = inf`` and ``fv_shape = 0`` make the force-length and
    force-velocity curves flat, i.e. ``F = a * f_max``.
    """

    name: str
    f_max: float
    l_opt: float
    v_max: float
    path: tuple  # ((body, (x, y, z)), ...)
    fl_width: float = 0.45
    fv_shape: float = 0.3

    def __post_init__(self):
        path = tuple((str(b), _frozen_array(p, (3,))) for b, p in self.path)
        object.__setattr__(self, "path", path)
        for k in ("f_max", "l_opt", "v_max", "fv_shape"):
            object.__setattr__(self, k, float(getattr(self, k)))
        fl = math.inf if self.fl_width is None else float(self.fl_width)
        object.__setattr__(self, "fl_width", fl)


@dataclass(frozen=True)
class MarkerDef:
    name: str
    body: str
    local_offset: np.ndarray
    weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "local_offset", _frozen_array(self.local_offset, (3,)))
        object.__setattr__(self, "weight", float(self.weight))


@dataclass(frozen=True)
class SubjectAnthropometry:
    height: float
    mass: float
    scale_overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Link:
    """Elementary one-axis joint plus the body inertia it carries (if any)."""

    body: int
    parent: int
    kind: str
    axis: np.ndarray
    offset: np.ndarray
    dof: int
    mass: float
    com: np.ndarray
    inertia: np.ndarray


@dataclass(frozen=True)
class Violation:
    path: str
    message: str

    def __str__(self):
        return f"{self.path}: {self.message}"


@dataclass(frozen=True)
class Model:
    bodies: tuple
    muscles: tuple
    markers: tuple
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, -9.81, 0.0]))
    reserve_optimal_force: object = 1.0
    reference_pose: object = None
    template_height: float | None = None
    # side ("r"/"l") -> body name receiving that side's ground reaction
    contact_bodies: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "bodies", tuple(self.bodies))
        object.__setattr__(self, "muscles", tuple(self.muscles))
        object.__setattr__(self, "markers", tuple(self.markers))
        object.__setattr__(self, "gravity", _frozen_array(self.gravity, (3,)))
        object.__setattr__(self, "contact_bodies", dict(self.contact_bodies))
        n = self.ndof
        tau_opt = np.asarray(self.reserve_optimal_force, dtype=float)
        if tau_opt.ndim == 0:
            tau_opt = np.full(n, float(tau_opt))
        object.__setattr__(self, "reserve_optimal_force", _frozen_array(tau_opt))
        ref = np.zeros(n) if self.reference_pose is None else self.reference_pose
        object.__setattr__(self, "reference_pose", _frozen_array(ref))

    # -- indexing -----------------------------------------------------------

    @property
    def ndof(self) -> int:
        return sum(b.ndof for b in self.bodies)

    @property
    def n_muscles(self) -> int:
        return len(self.muscles)

    @cached_property
    def body_index(self) -> dict:
        return {b.name: i for i, b in enumerate(self.bodies)}

    @cached_property
    def marker_names(self) -> list:
        return [m.name for m in self.markers]

    @cached_property
    def muscle_names(self) -> list:
        return [m.name for m in self.muscles]

    @cached_property
    def dof_names(self) -> list:
        names = []
        for b in self.bodies:
            if b.joint_type == "free":
                names += [f"{b.name}_{s}" for s in ("tx", "ty", "tz", "rx", "ry", "rz")]
            elif b.joint_type == "free-planar":
                names += [f"{b.name}_{s}" for s in ("t1", "t2", "r")]
            elif b.ndof == 1:
                names.append(b.name)
        return names

    @cached_property
    def dof_types(self) -> list:
        """'rotational' or 'translational' per DOF."""
        kinds = [""] * self.ndof
        for link in self.links:
            if link.dof >= 0:
                kinds[link.dof] = "rotational" if link.kind == "revolute" else "translational"
        return kinds

    @cached_property
    def links(self) -> tuple:
        links, _ = _build_links(self)
        return links

    @cached_property
    def body_link(self) -> tuple:
        """Index of the link whose frame is the body frame, per body."""
        _, body_link = _build_links(self)
        return body_link

    @cached_property
    def link_ancestors(self) -> tuple:
        """For each link, indices of links on its path to the world (inclusive)."""
        out = []
        for i, link in enumerate(self.links):
            chain = [i]
            p = link.parent
            while p >= 0:
                chain.append(p)
                p = self.links[p].parent
            out.append(tuple(chain))
        return tuple(out)

    @cached_property
    def total_mass(self) -> float:
        return float(sum(b.mass for b in self.bodies))

    @cached_property
    def reference_lengths(self) -> np.ndarray:
        """Muscle-tendon lengths at the reference pose (length normalizers)."""
        return _frozen_array(muscle_tendon_lengths(self, self.reference_pose))

    def dof_ranges(self) -> np.ndarray:
        """(DOF, 2) coordinate ranges; joints without a declared range get ±1."""
        out = []
        for b in self.bodies:
            if b.joint_range is not None and len(b.joint_range) == b.ndof:
                out += list(b.joint_range)
            else:
                out += [(-1.0, 1.0)] * b.ndof
        return np.array(out, dtype=float).reshape(-1, 2)


def _planar_basis(n):
    n = np.asarray(n, dtype=float)
    e = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = e - np.dot(e, n) * n
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


def _build_links(model):
    links = []
    body_link = []
    dof = 0
    ex, ey, ez = np.eye(3)
    for bi, b in enumerate(model.bodies):
        parent = -1 if b.parent is None else body_link[model.body_index[b.parent]]
        if b.joint_type == "free":
            axes = [("prismatic", ex), ("prismatic", ey), ("prismatic", ez),
                    ("revolute", ex), ("revolute", ey), ("revolute", ez)]
        elif b.joint_type == "free-planar":
            n = np.asarray(b.joint_axis)
            u, v = _planar_basis(n)
            axes = [("prismatic", u), ("prismatic", v), ("revolute", n)]
        elif b.joint_type == "fixed":
            axes = [("fixed", ez)]
        else:
            axes = [(b.joint_type, np.asarray(b.joint_axis))]
        for k, (kind, axis) in enumerate(axes):
            last = k == len(axes) - 1
            links.append(Link(
                body=bi,
                parent=parent,
                kind=kind,
                axis=_frozen_array(axis),
                offset=b.offset_in_parent if k == 0 else _frozen_array(np.zeros(3)),
                dof=-1 if kind == "fixed" else dof,
                mass=b.mass if last else 0.0,
                com=b.com_local if last else _frozen_array(np.zeros(3)),
                inertia=b.inertia_local if last else _frozen_array(np.zeros((3, 3))),
            ))
            if kind != "fixed":
                dof += 1
            parent = len(links) - 1
        body_link.append(len(links) - 1)
    return tuple(links), tuple(body_link)


# -- validation -------------------------------------------------------------


def validate_model(model: Model) -> list:
    """Return every invariant violation as a :class:`Violation` (empty if valid)."""
    out = []
    names = {}
    for i, b in enumerate(model.bodies):
        p = f"bodies[{i}]"
        if b.name in names:
            out.append(Violation(f"{p}.name", f"duplicate body name {b.name!r}"))
        if b.joint_type not in JOINT_TYPES:
            out.append(Violation(f"{p}.joint_type", f"unknown joint type {b.joint_type!r}"))
        if b.parent is None:
            if i != 0:
                out.append(Violation(f"{p}.parent", f"body {b.name!r} is a second root"))
        elif b.parent not in names:
            if b.parent in [x.name for x in model.bodies]:
                out.append(Violation(f"{p}.parent",
                                     f"parent {b.parent!r} must be listed before {b.name!r}"))
            else:
                out.append(Violation(f"{p}.parent", f"unknown parent body {b.parent!r}"))
        elif b.joint_type in ("free", "free-planar"):
            out.append(Violation(f"{p}.joint_type",
                                 f"{b.joint_type} joints are only allowed on the root body"))
        if i == 0 and b.parent is not None:
            out.append(Violation(f"{p}.parent", "first body must be the root (parent null)"))
        names.setdefault(b.name, i)
        if not b.mass > 0:
            out.append(Violation(f"{p}.mass", f"mass must be > 0, got {b.mass}"))
        axis_norm = float(np.linalg.norm(b.joint_axis)) if b.joint_axis.shape == (3,) else -1.0
        if abs(axis_norm - 1.0) > 1e-9:
            out.append(Violation(f"{p}.joint_axis", f"axis must have unit norm, got {axis_norm}"))
        I = b.inertia_local
        if I.shape != (3, 3):
            out.append(Violation(f"{p}.inertia_local", "inertia must be 3x3"))
        elif not np.allclose(I, I.T, rtol=0, atol=1e-12 * max(1.0, np.abs(I).max())):
            out.append(Violation(f"{p}.inertia_local", "inertia must be symmetric"))
        elif np.linalg.eigvalsh(I).min() < -1e-12 * max(1.0, np.abs(I).max()):
            out.append(Violation(f"{p}.inertia_local", "inertia must be positive semi-definite"))
        if b.joint_range is not None and len(b.joint_range) != b.ndof:
            out.append(Violation(f"{p}.joint_range", f"expected {b.ndof} ranges"))
    if not model.bodies:
        out.append(Violation("bodies", "model has no bodies"))

    if len(model.muscles) < 1:
        out.append(Violation("muscles", "model needs at least one muscle"))
    seen = set()
    for i, m in enumerate(model.muscles):
        p = f"muscles[{i}]"
        if m.name in seen:
            out.append(Violation(f"{p}.name", f"duplicate muscle name {m.name!r}"))
        seen.add(m.name)
        for k in ("f_max", "l_opt", "v_max"):
            if not getattr(m, k) > 0:
                out.append(Violation(f"{p}.{k}", f"muscle {m.name!r}: {k} must be > 0"))
        if not m.fl_width > 0:
            out.append(Violation(f"{p}.fl_width", f"muscle {m.name!r}: fl_width must be > 0"))
        if len(m.path) < 2:
            out.append(Violation(f"{p}.path", f"muscle {m.name!r}: path needs >= 2 points"))
        for k, (body, _) in enumerate(m.path):
            if body not in names:
                out.append(Violation(f"{p}.path[{k}].body",
                                     f"muscle {m.name!r} attaches to unknown body {body!r}"))
        if len(m.path) >= 2 and len({b for b, _ in m.path}) < 2:
            out.append(Violation(f"{p}.path",
                                 f"muscle {m.name!r}: path must span >= 2 distinct bodies"))

    seen = set()
    for i, mk in enumerate(model.markers):
        p = f"markers[{i}]"
        if mk.name in seen:
            out.append(Violation(f"{p}.name", f"duplicate marker name {mk.name!r}"))
        seen.add(mk.name)
        if mk.body not in names:
            out.append(Violation(f"{p}.body", f"marker {mk.name!r} on unknown body {mk.body!r}"))
        if not mk.weight >= 0:
            out.append(Violation(f"{p}.weight", f"marker {mk.name!r}: weight must be >= 0"))

    ndof = sum(b.ndof for b in model.bodies)
    if model.reserve_optimal_force.shape != (ndof,) or not np.all(model.reserve_optimal_force > 0):
        out.append(Violation("reserve_optimal_force", "must be > 0 for every DOF"))
    if model.reference_pose.shape != (ndof,):
        out.append(Violation("reference_pose", f"expected {ndof} values"))
    for side, body in model.contact_bodies.items():
        if body not in names:
            out.append(Violation(f"contact_bodies.{side}", f"unknown body {body!r}"))
    if model.template_height is not None and not model.template_height > 0:
        out.append(Violation("template_height", "must be > 0"))
    return out


class ModelError(ValueError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


def check_model(model: Model) -> Model:
    problems = validate_model(model)
    if problems:
        raise ModelError(problems)
    return model


# -- scaling ----------------------------------------------------------------


def model_height(model: Model) -> float:
    """Template height: declared value, else vertical marker span at the reference pose."""
    if model.template_height is not None:
        return float(model.template_height)
    from .kinematics import place_markers

    if not model.markers:
        raise ValueError("model declares no template_height and has no markers")
    g = model.gravity
    up = -g / np.linalg.norm(g) if np.linalg.norm(g) > 0 else np.array([0.0, 1.0, 0.0])
    h = place_markers(model, model.reference_pose) @ up
    span = float(h.max() - h.min())
    if span <= 0:
        raise ValueError("cannot infer template height from markers")
    return span


def _scale_inertia(I, mass_ratio, s):
    # second-moment matrix scales as S C S; inertia = tr(C) 1 - C
    C = 0.5 * np.trace(I) * np.eye(3) - I
    C = mass_ratio * (s[:, None] * C * s[None, :])
    return np.trace(C) * np.eye(3) - C


def scale_model(template: Model, subject: SubjectAnthropometry) -> Model:
    """Scale a template to a subject's height, mass and per-segment overrides.

    Geometry attached to a segment (its children's joint offsets, COM, marker
    offsets, muscle path points) is multiplied by that segment's 3-vector
    factor. Masses are scaled to the subject's total mass, inertia follows
    mass ratio times the squared length factor, ``l_opt`` follows the mean
    factor of the bodies the muscle attaches to, and ``f_max`` is kept.
    """
    check_model(template)
    if not subject.height > 0 or not subject.mass > 0:
        raise ValueError("subject height and mass must be > 0")
    h0 = model_height(template)
    s0 = subject.height / h0
    factors = {}
    for b in template.bodies:
        f = np.asarray(subject.scale_overrides.get(b.name, (s0, s0, s0)), dtype=float)
        f = np.broadcast_to(f, (3,)).astype(float)
        if not np.all(f > 0):
            raise ValueError(f"scale factors for {b.name!r} must be > 0")
        factors[b.name] = f
    if h0 == subject.height and subject.mass == template.total_mass and not subject.scale_overrides:
        return template
    mass_ratio = subject.mass / template.total_mass

    bodies = []
    for b in template.bodies:
        s = factors[b.name]
        parent_s = factors[b.parent] if b.parent is not None else s
        bodies.append(replace(
            b,
            offset_in_parent=b.offset_in_parent * parent_s,
            mass=b.mass * mass_ratio,
            com_local=b.com_local * s,
            inertia_local=_scale_inertia(np.asarray(b.inertia_local), mass_ratio, s),
        ))
    muscles = []
    for m in template.muscles:
        path = tuple((body, p * factors[body]) for body, p in m.path)
        attach = list(dict.fromkeys(body for body, _ in m.path))
        lf = float(np.mean([factors[body].mean() for body in attach]))
        muscles.append(replace(m, path=path, l_opt=m.l_opt * lf))
    markers = [replace(mk, local_offset=mk.local_offset * factors[mk.body]) for mk in template.markers]
    return replace(
        template,
        bodies=tuple(bodies),
        muscles=tuple(muscles),
        markers=tuple(markers),
        template_height=subject.height,
    )


# -- muscle geometry and force ----------------------------------------------


def _check_q(model, q):
    q = np.asarray(q, dtype=float)
    if q.shape != (model.ndof,):
        raise ValueError(f"expected {model.ndof} coordinates, got shape {q.shape}")
    return q


def muscle_tendon_lengths(model: Model, q) -> np.ndarray:
    """Polyline length of every muscle path at configuration ``q`` (m)."""
    from .kinematics import body_poses

    q = _check_q(model, q)
    R, p = body_poses(model, q)
    idx = model.body_index
    out = np.zeros(model.n_muscles)
    for i, m in enumerate(model.muscles):
        pts = np.array([R[idx[b]] @ r + p[idx[b]] for b, r in m.path])
        out[i] = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
    return out


MOMENT_ARM_STEP = 1e-5


def moment_arms(model: Model, q, h: float = MOMENT_ARM_STEP) -> np.ndarray:
    """Moment-arm matrix (DOF x muscles), ``R[j, i] = -dl_i/dq_j`` by central differences."""
    q = _check_q(model, q)
    R = np.zeros((model.ndof, model.n_muscles))
    for j in range(model.ndof):
        dq = np.zeros_like(q)
        dq[j] = h
        R[j] = (muscle_tendon_lengths(model, q + dq) - muscle_tendon_lengths(model, q - dq)) / (-2 * h)
    return R


def force_length(x, width):
    if math.isinf(width):
        return np.ones_like(np.asarray(x, dtype=float))
    return np.exp(-(((np.asarray(x, dtype=float) - 1.0) / width) ** 2))


def force_velocity(u, shape):
    """Clamped linear force-velocity multiplier; ``u`` is normalized lengthening velocity."""
    return np.clip(1.0 + shape * np.asarray(u, dtype=float), FV_MIN, FV_MAX)


def muscle_force(params: HillMuscleParams, a, l_mt, v_mt, l_ref=None):
    """Rigid-tendon Hill force ``a * f_max * f_l * f_v`` in N.

    ``l_ref`` is the length that maps to normalized fiber length 1; it
    defaults to ``l_opt``. Model-level callers pass the reference-pose length.
    """
    a_arr = np.asarray(a, dtype=float)
    if np.any(a_arr < 0) or np.any(a_arr > 1) or np.any(np.isnan(a_arr)):
        raise ValueError(f"activation must lie in [0, 1], got {a}")
    l_ref = params.l_opt if l_ref is None else l_ref
    fl = force_length(np.asarray(l_mt) / l_ref, params.fl_width)
    fv = force_velocity(np.asarray(v_mt) / (params.v_max * params.l_opt), params.fv_shape)
    return a_arr * params.f_max * fl * fv


def muscle_velocities(model: Model, q, qdot, R=None) -> np.ndarray:
    """Muscle-tendon lengthening velocities, ``-R^T qdot``."""
    if R is None:
        R = moment_arms(model, q)
    return -R.T @ np.asarray(qdot, dtype=float)


def force_factors(model: Model, q, qdot, R=None) -> np.ndarray:
    """Per-muscle force at full activation, ``f_max * f_l * f_v``.

    With the rigid-tendon model the muscle force is this factor times the
    activation, so joint torques are linear in the activations.
    """
    if R is None:
        R = moment_arms(model, q)
    l = muscle_tendon_lengths(model, q)
    v = muscle_velocities(model, q, qdot, R)
    lref = model.reference_lengths
    return np.array([
        muscle_force(m, 1.0, l[i], v[i], lref[i]) for i, m in enumerate(model.muscles)
    ], dtype=float)
