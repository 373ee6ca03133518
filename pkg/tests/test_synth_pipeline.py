import json

import numpy as np
import pytest

from conftest import ARM, LEG, read_metrics, run_synth, tree_bytes, write_config
from msksim.config import read_config
from msksim.dynamics import inverse_dynamics, resample_grf
from msksim.pipeline import (
    ACCEPTANCE,
    ACTIVATIONS,
    ID_TORQUES,
    IK_COORDS,
    METRICS,
    SO_RAW,
    StageError,
    Pipeline,
    align_tables,
    check_config,
    resample_uniform,
)
from msksim.staticopt import solve_sequence
from msksim.storage import read_storage, read_model
from msksim.synth import random_motion, synthesize


@pytest.fixture(scope="module")
def arm_synth(tmp_path_factory):
    return run_synth(ARM, tmp_path_factory.mktemp("arm_synth"), duration=2.0)


def _pipeline(tmp_path, synth_dir, model=ARM, **extra):
    cfg = read_config(write_config(tmp_path / "cfg.json", model, synth_dir, tmp_path / "out", **extra))
    check_config(cfg)
    return Pipeline(cfg)


def test_synth_deterministic(tmp_path, arm_synth):
    again = run_synth(ARM, tmp_path / "again", duration=2.0)
    assert tree_bytes(again) == tree_bytes(arm_synth)
    other = synthesize(read_model(ARM), 2.0, 30.0, seed=43)
    assert not np.array_equal(other.kinematics.q, read_storage(arm_synth / "synth_coordinates.sto").values)


def test_synth_rejects_empty_duration(arm_model):
    with pytest.raises(ValueError):
        synthesize(arm_model, 0.0, 30.0, seed=1)
    with pytest.raises(ValueError):
        random_motion(arm_model, 1.0, 0.0, seed=1)


def test_synth_motion_inside_ranges_and_analytic_derivatives(arm_model):
    traj, spline = random_motion(arm_model, 3.0, 100.0, seed=5)
    r = arm_model.dof_ranges()
    assert np.all(traj.q >= r[:, 0]) and np.all(traj.q <= r[:, 1])
    # spline derivatives agree with central differences of the spline itself
    h = 1e-5
    t = traj.times[1:-1]
    np.testing.assert_allclose(traj.qdot[1:-1], (spline(t + h) - spline(t - h)) / (2 * h), atol=1e-6)


def test_synth_reference_is_min_effort_solution(arm_model):
    res = synthesize(arm_model, 1.0, 30.0, seed=3)
    assert res.so_diagnostics.flagged_frames == []
    again, _ = solve_sequence(arm_model, res.kinematics, res.torques)
    np.testing.assert_allclose(again.activations, res.activations.activations, atol=1e-6)


def test_leg_grf_statically_consistent(leg_model):
    res = synthesize(leg_model, 1.0, 50.0, seed=4)
    grf = res.grf
    assert grf is not None and set(grf.feet) == {"r"}
    M = leg_model.total_mass
    fy = grf.feet["r"].force[:, 1]
    # total vertical force is the weight plus a bounded inertial term
    assert np.all(fy > 0)
    assert abs(np.mean(fy) - M * 9.81) < 0.2 * M * 9.81
    n_root = leg_model.bodies[0].ndof
    for k in range(len(grf.times)):
        tau = inverse_dynamics(leg_model, res.kinematics.q[k], res.kinematics.qdot[k],
                               res.kinematics.qddot[k], grf.frame(k))
        assert np.max(np.abs(tau[:n_root])) <= 1e-2
    # CoP lies on the ground plane, near the foot
    cop = grf.feet["r"].cop
    assert np.max(np.abs(cop[:, 1])) <= 1e-12
    assert res.so_diagnostics.flagged_frames == []


def test_resample_uniform():
    t = np.array([0.0, 0.3, 1.0])
    v = np.array([[0.0], [3.0], [10.0]])
    grid, out = resample_uniform(t, v, 4.0)
    np.testing.assert_allclose(grid, [0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_allclose(out[:, 0], 10 * grid, atol=1e-12)


def test_align_tables_intersects_and_checks_columns(arm_synth):
    gt = read_storage(arm_synth / "synth_activations.sto", to_radians=False)
    sub = gt.__class__(gt.name, gt.column_labels, gt.rows[::2].copy(), gt.in_degrees, list(gt.header))
    times, labels, P, G, m = align_tables(sub, gt)
    assert len(times) == len(sub.rows) and labels == gt.labels
    np.testing.assert_array_equal(P, G)
    assert m.valid.all()
    bad = gt.__class__(gt.name, ["time"] + gt.labels[:-1] + ["bogus"], gt.rows.copy())
    with pytest.raises(ValueError, match="bogus"):
        align_tables(bad, gt)


def test_stage_files_and_resumability(tmp_path, arm_synth):
    p = _pipeline(tmp_path, arm_synth)
    p.run()
    for name in (IK_COORDS, ID_TORQUES, SO_RAW, ACCEPTANCE, ACTIVATIONS, METRICS, "scaled_model.json",
                 "ik_diagnostics.json", "so_diagnostics.sto"):
        assert (p.out / name).is_file(), name
    assert json.loads((p.out / ACCEPTANCE).read_text())["accepted"] is True
    before = tree_bytes(p.out)
    # later stages rerun in isolation reproduce their outputs exactly
    for stage in ("so", "smooth", "metrics"):
        p.run([stage])
        assert tree_bytes(p.out) == before


def test_stage_without_upstream_fails(tmp_path, arm_synth):
    p = _pipeline(tmp_path, arm_synth)
    with pytest.raises(StageError) as e:
        p.run(["id"])
    assert e.value.stage == "id"


def test_coordinate_input_and_frame_rate(tmp_path, arm_synth):
    p = _pipeline(tmp_path, arm_synth, markers=False, frame_rate=15.0)
    p.run()
    q = read_storage(p.out / IK_COORDS)
    np.testing.assert_allclose(np.diff(q.times), 1 / 15.0, atol=1e-12)
    rep = read_metrics(p.out / METRICS)
    assert rep[("activations", "ALL", "PCC")] >= 0.99


def test_leg_pipeline_end_to_end(tmp_path):
    synth = run_synth(LEG, tmp_path / "leg", duration=1.5, frame_rate=50.0, seed=2)
    p = _pipeline(tmp_path, synth, model=LEG)
    p.run()
    rep = read_metrics(p.out / METRICS)
    assert rep[("activations", "ALL", "PCC")] >= 0.99
    assert rep[("activations", "ALL", "RMSE")] <= 0.01


def test_grf_resampled_to_ik_times(tmp_path):
    synth = run_synth(LEG, tmp_path / "leg", duration=1.0, frame_rate=50.0, seed=2)
    from msksim.storage import read_grf

    grf = read_grf(synth / "synth_grf.sto", {"r": "foot"})
    same = resample_grf(grf, grf.times)
    np.testing.assert_allclose(same.feet["r"].force, grf.feet["r"].force, atol=1e-12)
