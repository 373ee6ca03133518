import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import ARM, LEG
from msksim.dynamics import FootRecord, GrfTrajectory
from msksim.kinematics import MarkerTrajectory, place_markers
from msksim.storage import (
    DocumentError,
    StorageError,
    TimeSeriesTable,
    model_from_dict,
    model_to_dict,
    read_grf,
    read_model,
    read_storage,
    read_trc,
    write_grf,
    write_model,
    write_storage,
    write_trc,
)

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


def test_round_trip_example(tmp_path):
    t = TimeSeriesTable.from_columns("demo", [0.0, 1 / 30], ["a"], [[0.1], [0.2]])
    write_storage(t, tmp_path / "x.sto")
    back = read_storage(tmp_path / "x.sto")
    assert back.name == "demo" and back.column_labels == ["time", "a"]
    assert np.array_equal(back.rows, t.rows)
    text = (tmp_path / "x.sto").read_text()
    assert text.splitlines()[:6] == ["demo", "version=1", "nRows=2", "nColumns=2", "inDegrees=no", "endheader"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(finite, min_size=3, max_size=3), min_size=1, max_size=8))
def test_round_trip_bit_exact(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("rt") / "x.sto"
    vals = np.array(rows)
    t = TimeSeriesTable.from_columns("t", np.arange(len(vals)) * 0.1, ["a", "b", "c"], vals)
    write_storage(t, path)
    back = read_storage(path)
    assert back.rows.tobytes() == t.rows.tobytes()


def test_unknown_header_lines_preserved(tmp_path):
    src = tmp_path / "in.sto"
    src.write_text("acts\nversion=1\nnRows=1\nnColumns=2\ninDegrees=no\nsubject=S01\n"
                   "comment free text\nendheader\ntime\tm1\n0.0\t0.5\n")
    t = read_storage(src)
    assert t.header == ["subject=S01", "comment free text"]
    write_storage(t, tmp_path / "out.sto")
    assert read_storage(tmp_path / "out.sto").header == t.header


def test_crlf_accepted(tmp_path):
    p = tmp_path / "w.sto"
    p.write_bytes(b"w\r\nversion=1\r\nnRows=1\r\nnColumns=2\r\ninDegrees=no\r\nendheader\r\ntime\ta\r\n0\t1.5\r\n")
    assert read_storage(p).values[0, 0] == 1.5


def test_degrees_converted_and_flag_kept(tmp_path):
    p = tmp_path / "deg.sto"
    p.write_text("q\nversion=1\nnRows=1\nnColumns=2\ninDegrees=yes\nendheader\ntime\tknee\n0.0\t90\n")
    t = read_storage(p)
    assert t.in_degrees
    assert t.values[0, 0] == pytest.approx(math.pi / 2, abs=1e-15)
    write_storage(t, tmp_path / "again.sto")
    assert "inDegrees=yes" in (tmp_path / "again.sto").read_text()
    assert read_storage(tmp_path / "again.sto", to_radians=False).values[0, 0] == pytest.approx(90.0, abs=1e-12)


@pytest.mark.parametrize("body, field", [
    ("x\nnRows=5\nnColumns=2\nendheader\ntime\ta\n0\t1\n1\t2\n2\t3\n3\t4\n", "nRows"),
    ("x\nnRows=1\nnColumns=3\nendheader\ntime\ta\n0\t1\n", "nColumns"),
    ("x\nnRows=2\nnColumns=2\nendheader\ntime\ta\n0\t1\n0\t2\n", "time"),
    ("x\nnRows=1\nnColumns=2\nendheader\ntime\ta\n0\tabc\n", "a"),
    ("x\nnRows=1\nnColumns=2\nendheader\ntime\ta\n0\tnan\n", "a"),
])
def test_structured_errors(tmp_path, body, field):
    p = tmp_path / "bad.sto"
    p.write_text(body)
    with pytest.raises(StorageError) as e:
        read_storage(p)
    assert e.value.field == field
    assert str(p) in str(e.value)


def test_missing_endheader(tmp_path):
    p = tmp_path / "bad.sto"
    p.write_text("x\nnRows=1\ntime\ta\n0\t1\n")
    with pytest.raises(StorageError, match="endheader"):
        read_storage(p)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.sampled_from(list("abc=\t\n0123456789.-eE ") + [
    "endheader", "nRows=", "nColumns=", "time", "inDegrees=yes", "PathFileType", "Frame#", "\n"]),
    max_size=80).map("".join))
def test_parser_totality(tmp_path_factory, text):
    p = tmp_path_factory.mktemp("fz") / "f.sto"
    p.write_text(text)
    try:
        read_storage(p)
    except StorageError:
        pass
    try:
        read_trc(p)
    except StorageError:
        pass


def test_non_finite_write_refused(tmp_path):
    t = TimeSeriesTable.from_columns("x", [0.0], ["a"], [[np.nan]])
    with pytest.raises(ValueError):
        write_storage(t, tmp_path / "x.sto")


# -- marker files --------------------------------------------------------------


def _trc_text(rows, units="mm"):
    head = [
        "PathFileType\t4\t(X/Y/Z)\tx.trc",
        "DataRate\tCameraRate\tNumFrames\tNumMarkers\tUnits",
        f"100\t100\t{len(rows)}\t2\t{units}",
        "Frame#\tTime\tA\t\t\tB\t\t",
        "\t\tX1\tY1\tZ1\tX2\tY2\tZ2",
        "",
    ]
    return "\n".join(head + rows) + "\n"


def test_trc_millimetres_and_gaps(tmp_path):
    p = tmp_path / "m.trc"
    p.write_text(_trc_text(["1\t0.00\t1000\t2000\t3000\t10\t20\t30",
                            "2\t0.01\t\t2000\t3000\t11\t21\t31",
                            "3\t0.02\t1001\t2001\t3001\t12\t22\t32"]))
    m = read_trc(p)
    assert m.names == ["A", "B"]
    np.testing.assert_allclose(m.positions[0], [[1, 2, 3], [0.01, 0.02, 0.03]], atol=1e-15)
    assert not m.validity[1, 0] and m.validity[1, 1] and m.validity[2].all()


def test_trc_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pos = rng.normal(size=(4, 3, 3))
    valid = np.ones((4, 3), dtype=bool)
    valid[2, 1] = False
    pos[2, 1] = np.nan
    m = MarkerTrajectory(np.arange(4) / 60, ["a", "b", "c"], pos, valid)
    for units in ("m", "mm"):
        write_trc(m, tmp_path / f"{units}.trc", units=units)
        back = read_trc(tmp_path / f"{units}.trc")
        assert back.names == m.names
        np.testing.assert_array_equal(back.validity, valid)
        if units == "m":
            assert np.array_equal(back.positions[valid], pos[valid])
        else:
            np.testing.assert_allclose(back.positions[valid], pos[valid], rtol=1e-15, atol=1e-15)
        np.testing.assert_array_equal(back.times, m.times)


def test_trc_header_errors(tmp_path):
    p = tmp_path / "bad.trc"
    p.write_text("hello\n")
    with pytest.raises(StorageError):
        read_trc(p)
    p.write_text(_trc_text(["1\t0\t1\t2\t3\t4\t5\t6"], units="furlong"))
    with pytest.raises(StorageError) as e:
        read_trc(p)
    assert e.value.field == "Units"


# -- GRF -----------------------------------------------------------------------


def test_grf_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    T = 5
    feet = {s: FootRecord(b, rng.normal(size=(T, 3)), rng.normal(size=(T, 3)), rng.normal(size=(T, 3)))
            for s, b in (("r", "foot_r"), ("l", "foot_l"))}
    grf = GrfTrajectory(np.arange(T) / 100, feet)
    write_grf(grf, tmp_path / "g.sto")
    labels = read_storage(tmp_path / "g.sto").labels
    assert labels[:3] == ["l_force_vx", "l_force_vy", "l_force_vz"] and "r_cop_pz" in labels
    back = read_grf(tmp_path / "g.sto", {"r": "foot_r", "l": "foot_l"})
    for s in "rl":
        for k in ("force", "cop", "moment"):
            assert np.array_equal(getattr(back.feet[s], k), getattr(feet[s], k))
        assert back.feet[s].applied_body == feet[s].applied_body


def test_grf_moment_optional_and_side_check(tmp_path):
    t = TimeSeriesTable.from_columns("g", [0.0, 0.1], [f"r_force_v{a}" for a in "xyz"] + [f"r_cop_p{a}" for a in "xyz"],
                                     np.ones((2, 6)))
    write_storage(t, tmp_path / "g.sto")
    back = read_grf(tmp_path / "g.sto", {"r": "foot"})
    assert np.all(back.feet["r"].moment == 0)
    with pytest.raises(StorageError):
        read_grf(tmp_path / "g.sto", {"l": "foot"})


# -- model documents -----------------------------------------------------------


def _doc(path):
    return json.loads(path.read_text())


def test_fixtures_parse_and_validate():
    for p in (ARM, LEG):
        m = read_model(p)
        assert m.n_muscles >= 1


def test_minimal_one_body_needs_a_muscle():
    doc = {"format_version": 1, "bodies": [{"name": "b", "parent": None, "joint_type": "revolute", "mass": 1.0}],
           "muscles": [], "markers": []}
    with pytest.raises(DocumentError) as e:
        model_from_dict(doc)
    assert any(d.startswith("muscles") for d in e.value.diagnostics)


def test_unknown_key_named():
    doc = _doc(ARM)
    doc["musles"] = doc.pop("muscles")
    with pytest.raises(DocumentError) as e:
        model_from_dict(doc)
    assert "musles: unknown key 'musles'" in e.value.diagnostics


def test_nested_field_paths():
    doc = _doc(ARM)
    doc["muscles"][1]["path"][0]["pnt"] = [0, 0, 0]
    doc["bodies"][1]["mass"] = "heavy"
    with pytest.raises(DocumentError) as e:
        model_from_dict(doc)
    d = e.value.diagnostics
    assert any(x.startswith("bodies[1].mass:") for x in d)
    assert any("muscles[1].path[0].pnt: unknown key" in x for x in d)


def test_format_version_enforced():
    doc = _doc(ARM)
    doc["format_version"] = 2
    with pytest.raises(DocumentError) as e:
        model_from_dict(doc)
    assert any(x.startswith("format_version") for x in e.value.diagnostics)


def test_model_document_round_trip(tmp_path):
    m = read_model(ARM)
    write_model(m, tmp_path / "m.json")
    again = read_model(tmp_path / "m.json")
    assert model_to_dict(again) == model_to_dict(m)
    q = np.array([0.2, 0.7])
    assert np.array_equal(place_markers(again, q), place_markers(m, q))


def test_invalid_json_reported(tmp_path):
    p = tmp_path / "m.json"
    p.write_text("{ not json")
    with pytest.raises((StorageError, DocumentError)) as e:
        read_model(p)
    assert str(p) in str(e.value)
