"""Small hand-built models shared by the tests."""

import math
from pathlib import Path

import numpy as np
import pytest

from msksim.model import BodySegment, HillMuscleParams, MarkerDef, Model

DATA = Path(__file__).resolve().parents[1] / "src" / "msksim" / "data"
ARM = DATA / "arm_2dof.json"
LEG = DATA / "leg_planar.json"

Z = np.array([0.0, 0.0, 1.0])


def ground(mass=1.0):
    return BodySegment("ground", None, "fixed", mass=mass, inertia_local=np.eye(3) * 0.01)


def one_link(length=1.0):
    """Fixed ground plus one hinge about z; tip marker at ``length`` along x."""
    return Model(
        bodies=[ground(), BodySegment("link", "ground", "revolute", Z, mass=1.0,
                                      com_local=[length / 2, 0, 0],
                                      inertia_local=np.diag([0.001, 0.08, 0.08]))],
        muscles=[HillMuscleParams("m", 500.0, 0.1, 10.0,
                                  [("ground", [0.0, 0.05, 0.0]), ("link", [0.2, 0.05, 0.0])])],
        markers=[MarkerDef("tip", "link", [length, 0, 0]), MarkerDef("mid", "link", [length / 2, 0.1, 0])],
    )


def two_link(l1=1.0, l2=1.0):
    return Model(
        bodies=[
            ground(),
            BodySegment("upper", "ground", "revolute", Z, mass=2.0, com_local=[l1 / 2, 0, 0],
                        inertia_local=np.diag([0.002, 0.17, 0.17])),
            BodySegment("lower", "upper", "revolute", Z, [l1, 0, 0], mass=1.0,
                        com_local=[l2 / 2, 0, 0], inertia_local=np.diag([0.001, 0.08, 0.08])),
        ],
        muscles=[
            HillMuscleParams("mono", 800.0, 0.2, 10.0,
                             [("ground", [0.1, 0.05, 0]), ("upper", [0.4, 0.04, 0])]),
            HillMuscleParams("bi", 600.0, 0.3, 10.0,
                             [("ground", [-0.1, 0.06, 0]), ("upper", [0.5, 0.07, 0]),
                              ("lower", [0.3, 0.04, 0])]),
            HillMuscleParams("distal", 400.0, 0.15, 10.0,
                             [("upper", [0.7, -0.05, 0]), ("lower", [0.2, -0.03, 0])]),
        ],
        markers=[MarkerDef("elbow", "upper", [l1, 0, 0]), MarkerDef("upper_mid", "upper", [l1 / 2, 0.05, 0]),
                 MarkerDef("tip", "lower", [l2, 0, 0]), MarkerDef("lower_mid", "lower", [l2 / 2, -0.05, 0])],
    )


def pendulum(mass=2.0, d=0.5, izz=0.01, gravity=(0.0, -9.81, 0.0)):
    """Hinge about z at the origin, COM ``d`` along the body x axis."""
    return Model(
        bodies=[ground(), BodySegment("bob", "ground", "revolute", Z, mass=mass, com_local=[d, 0, 0],
                                      inertia_local=np.diag([izz, izz, izz]))],
        muscles=[HillMuscleParams("m", 100.0, 0.1, 10.0,
                                  [("ground", [0, 0.05, 0]), ("bob", [0.2, 0.05, 0])])],
        markers=[MarkerDef("bob", "bob", [d, 0, 0])],
        gravity=gravity,
    )


def chain3(rng=None):
    """Spatial 3-DOF chain with non-parallel axes and full inertia tensors."""
    rng = np.random.default_rng(7) if rng is None else rng

    def inertia():
        A = rng.normal(size=(3, 3)) * 0.1
        return A @ A.T + 0.01 * np.eye(3)

    ax2 = np.array([1.0, 1.0, 0.0]) / math.sqrt(2)
    return Model(
        bodies=[
            ground(),
            BodySegment("a", "ground", "revolute", Z, [0, 0, 0.1], 3.0, [0.1, 0.2, 0.0], inertia()),
            BodySegment("b", "a", "revolute", ax2, [0.3, 0.1, 0.0], 2.0, [0.2, -0.05, 0.1], inertia()),
            BodySegment("c", "b", "revolute", [0.0, 1.0, 0.0], [0.25, 0.0, 0.05], 1.0,
                        [0.1, 0.1, -0.05], inertia()),
        ],
        muscles=[
            HillMuscleParams("m1", 500.0, 0.2, 10.0, [("ground", [0.05, 0.05, 0]), ("a", [0.2, 0.1, 0.05])]),
            HillMuscleParams("m2", 500.0, 0.2, 10.0, [("a", [0.1, -0.05, 0]), ("b", [0.15, 0.02, 0.03]),
                                                      ("c", [0.1, 0.0, 0.02])]),
            HillMuscleParams("m3", 500.0, 0.2, 10.0, [("ground", [-0.05, 0, 0.1]), ("c", [0.2, 0.05, 0])]),
        ],
        markers=[MarkerDef(f"{b}{k}", b, off) for b in "abc"
                 for k, off in enumerate([[0.1, 0.05, 0.02], [0.3, -0.04, 0.05], [0.0, 0.1, -0.06]])],
    )


def point_mass(m=3.0):
    """Body on a vertical prismatic DOF."""
    return Model(
        bodies=[ground(), BodySegment("slider", "ground", "prismatic", [0, 1, 0], mass=m)],
        muscles=[HillMuscleParams("m", 100.0, 0.1, 10.0, [("ground", [0.1, 0, 0]), ("slider", [0.1, 0.5, 0])])],
        markers=[MarkerDef("s", "slider", [0, 0, 0])],
    )


def antagonists(d=0.05, f_max=1000.0, reserve=1.0):
    """1-DOF hinge with two straight-line muscles at perpendicular distance ``d``; flat curves."""
    def muscle(name, y):
        return HillMuscleParams(name, f_max, 0.1, 10.0, [("ground", [-0.5, y, 0]), ("arm", [0.5, y, 0])],
                                fl_width=math.inf, fv_shape=0.0)

    return Model(
        bodies=[ground(), BodySegment("arm", "ground", "revolute", Z, mass=1.0)],
        muscles=[muscle("agonist", d), muscle("antagonist", -d)],
        markers=[MarkerDef("tip", "arm", [0.5, 0, 0])],
        gravity=[0.0, 0.0, 0.0],
        reserve_optimal_force=reserve,
    )


@pytest.fixture
def arm_model():
    from msksim.storage import read_model

    return read_model(ARM)


@pytest.fixture
def leg_model():
    from msksim.storage import read_model

    return read_model(LEG)


# -- synthetic fixture runs ---------------------------------------------------


def run_synth(model_path, out, duration=5.0, frame_rate=30.0, seed=42):
    from msksim.cli import main

    assert main(["synth", "--model", str(model_path), "--duration", str(duration),
                 "--frame-rate", str(frame_rate), "--seed", str(seed), "--output", str(out)]) == 0
    return Path(out)


def write_config(path, model_path, synth_dir, output, markers=True, **extra):
    """Pipeline config pointing at a ``run_synth`` directory."""
    import json

    synth_dir = Path(synth_dir)
    doc = {"format_version": 1, "model": str(model_path), "output": str(output),
           "ground_truth": str(synth_dir / "synth_activations.sto")}
    if markers:
        doc["markers"] = str(synth_dir / "synth_markers.trc")
    else:
        doc["coordinates"] = str(synth_dir / "synth_coordinates.sto")
    if (synth_dir / "synth_grf.sto").is_file():
        doc["grf"] = str(synth_dir / "synth_grf.sto")
    doc.update(extra)
    doc = {k: v for k, v in doc.items() if v is not None}
    Path(path).write_text(json.dumps(doc, indent=2))
    return Path(path)


def read_metrics(path):
    """``{(sequence, channel, metric): value}`` from a report file."""
    out = {}
    for line in Path(path).read_text().splitlines()[1:]:
        s, c, m, v = line.split("\t")
        out[(s, c, m)] = float(v)
    return out


def tree_bytes(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
