"""Readers and writers for storage tables (.sto), marker files (.trc), GRF
tables and model documents.

Numbers are written with ``repr`` (shortest round-trip decimal), so writing
then reading returns bit-identical values regardless of locale.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .dynamics import FootRecord, GrfTrajectory
from .kinematics import MarkerTrajectory
from .model import (
    BodySegment,
    HillMuscleParams,
    MarkerDef,
    Model,
    ModelError,
    validate_model,
)


class StorageError(ValueError):
    """Structured parse failure: ``path``, ``line`` (1-based) and ``field``."""

    def __init__(self, message, path=None, line=None, field=None):
        self.path = None if path is None else str(path)
        self.line = line
        self.field = field
        loc = ":".join(str(x) for x in (self.path, line) if x is not None)
        where = f"{loc}: " if loc else ""
        if field is not None:
            where += f"[{field}] "
        super().__init__(f"{where}{message}")


def _fmt(x) -> str:
    x = float(x)
    if not math.isfinite(x):
        raise ValueError(f"cannot write non-finite value {x!r}")
    return repr(x)


def _read_lines(path):
    try:
        with open(path, "r", encoding="utf-8", newline="") as f:
            text = f.read()
    except UnicodeDecodeError as e:
        raise StorageError(f"not valid UTF-8: {e}", path) from None
    return text.replace("\r\n", "\n").replace("\r", "\n").split("\n")


# -- storage tables -----------------------------------------------------------


@dataclass
class TimeSeriesTable:
    name: str
    column_labels: list
    rows: np.ndarray  # (T, C); first column is time
    in_degrees: bool = False
    header: list = field(default_factory=list)  # extra header lines, verbatim

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=float).reshape(-1, len(self.column_labels))
        if not self.column_labels or self.column_labels[0] != "time":
            raise ValueError("first column label must be 'time'")
        if len(set(self.column_labels)) != len(self.column_labels):
            raise ValueError("column labels must be unique")

    @classmethod
    def from_columns(cls, name, times, labels, values, **kw):
        values = np.asarray(values, dtype=float).reshape(len(times), len(labels))
        return cls(name, ["time", *labels], np.column_stack([times, values]), **kw)

    @property
    def times(self) -> np.ndarray:
        return self.rows[:, 0]

    @property
    def labels(self) -> list:
        """Data labels (without time)."""
        return self.column_labels[1:]

    @property
    def values(self) -> np.ndarray:
        return self.rows[:, 1:]

    def column(self, label) -> np.ndarray:
        try:
            return self.rows[:, self.column_labels.index(label)]
        except ValueError:
            raise KeyError(label) from None

    def select(self, labels) -> np.ndarray:
        return np.column_stack([self.column(l) for l in labels]) if labels else np.zeros((len(self.rows), 0))


def write_storage(table: TimeSeriesTable, path) -> None:
    """Write a storage file; values flagged ``in_degrees`` are converted from radians."""
    T, C = table.rows.shape
    vals = table.rows.copy()
    if table.in_degrees:
        vals[:, 1:] = np.rad2deg(vals[:, 1:])
    lines = [
        table.name,
        "version=1",
        f"nRows={T}",
        f"nColumns={C}",
        f"inDegrees={'yes' if table.in_degrees else 'no'}",
        *table.header,
        "endheader",
        "\t".join(table.column_labels),
    ]
    lines += ["\t".join(_fmt(x) for x in row) for row in vals]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_storage(path, to_radians: bool = True) -> TimeSeriesTable:
    lines = _read_lines(path)
    try:
        end = next(i for i, l in enumerate(lines) if l.strip().lower() == "endheader")
    except StopIteration:
        raise StorageError("missing 'endheader'", path) from None
    name = lines[0].strip() if end > 0 and "=" not in lines[0] else ""
    n_rows = n_cols = None
    in_degrees = False
    extra = []
    for i in range(1 if name else 0, end):
        raw = lines[i]
        key, sep, val = raw.partition("=")
        k = key.strip()
        if sep and k == "nRows":
            n_rows = _header_int(val, path, i + 1, k)
        elif sep and k == "nColumns":
            n_cols = _header_int(val, path, i + 1, k)
        elif sep and k == "inDegrees":
            v = val.strip().lower()
            if v not in ("yes", "no"):
                raise StorageError(f"inDegrees must be yes/no, got {val.strip()!r}", path, i + 1, k)
            in_degrees = v == "yes"
        elif sep and k == "version":
            continue
        elif raw.strip():
            extra.append(raw)
    if end + 1 >= len(lines) or not lines[end + 1].strip():
        raise StorageError("missing column label row", path, end + 2)
    labels = lines[end + 1].rstrip("\n").split("\t")
    labels = [l.strip() for l in labels]
    if labels[0].lower() != "time":
        raise StorageError(f"first column must be 'time', got {labels[0]!r}", path, end + 2, labels[0])
    labels[0] = "time"
    if len(set(labels)) != len(labels):
        raise StorageError("duplicate column labels", path, end + 2)
    body = [(i + 1, l) for i, l in enumerate(lines[end + 2:], start=end + 2) if l.strip()]
    C = len(labels)
    if n_cols is not None and n_cols != C:
        raise StorageError(f"nColumns={n_cols} but label row has {C} columns", path, end + 2, "nColumns")
    if n_rows is not None and n_rows != len(body):
        raise StorageError(f"nRows={n_rows} but body has {len(body)} rows", path, None, "nRows")
    data = np.empty((len(body), C))
    for r, (lineno, l) in enumerate(body):
        parts = l.split("\t") if "\t" in l else l.split()
        if len(parts) != C:
            raise StorageError(f"expected {C} fields, got {len(parts)}", path, lineno)
        for c, tok in enumerate(parts):
            try:
                x = float(tok)
            except ValueError:
                raise StorageError(f"not a number: {tok!r}", path, lineno, labels[c]) from None
            if not math.isfinite(x):
                raise StorageError(f"missing or non-finite value {tok!r}", path, lineno, labels[c])
            data[r, c] = x
    if len(data) > 1 and np.any(np.diff(data[:, 0]) <= 0):
        bad = int(np.argmax(np.diff(data[:, 0]) <= 0)) + 1
        raise StorageError("time column is not strictly increasing", path, body[bad][0], "time")
    if in_degrees and to_radians:
        data[:, 1:] = np.deg2rad(data[:, 1:])
    return TimeSeriesTable(name, labels, data, in_degrees, extra)


def _header_int(val, path, line, key):
    try:
        return int(val.strip())
    except ValueError:
        raise StorageError(f"{key} must be an integer, got {val.strip()!r}", path, line, key) from None


# -- marker files ---------------------------------------------------------------

_UNITS = {"m": 1.0, "mm": 1e-3, "cm": 1e-2}


def write_trc(markers: MarkerTrajectory, path, units: str = "m") -> None:
    if units not in _UNITS:
        raise ValueError(f"unsupported units {units!r}")
    t = markers.times
    T, M = len(t), len(markers.names)
    rate = (T - 1) / (t[-1] - t[0]) if T > 1 else 0.0
    scale = 1.0 / _UNITS[units]
    lines = [
        f"PathFileType\t4\t(X/Y/Z)\t{os.path.basename(str(path))}",
        "DataRate\tCameraRate\tNumFrames\tNumMarkers\tUnits\tOrigDataRate\tOrigDataStartFrame\tOrigNumFrames",
        f"{_fmt(rate)}\t{_fmt(rate)}\t{T}\t{M}\t{units}\t{_fmt(rate)}\t1\t{T}",
        "\t".join(["Frame#", "Time"] + [x for n in markers.names for x in (n, "", "")]),
        "\t".join(["", ""] + [f"{a}{k + 1}" for k in range(M) for a in "XYZ"]),
        "",
    ]
    for i in range(T):
        fields = [str(i + 1), _fmt(t[i])]
        for k in range(M):
            if markers.validity[i, k]:
                fields += [_fmt(x * scale) if scale != 1.0 else _fmt(x) for x in markers.positions[i, k]]
            else:
                fields += ["", "", ""]
        lines.append("\t".join(fields))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def read_trc(path) -> MarkerTrajectory:
    lines = _read_lines(path)
    if not lines or not lines[0].startswith("PathFileType"):
        raise StorageError("first line must start with 'PathFileType'", path, 1)
    if len(lines) < 5:
        raise StorageError("truncated header", path, len(lines))
    keys = lines[1].split("\t")
    vals = lines[2].split("\t")
    meta = dict(zip([k.strip() for k in keys], [v.strip() for v in vals]))
    units = meta.get("Units", "m")
    if units not in _UNITS:
        raise StorageError(f"unsupported units {units!r}", path, 3, "Units")
    scale = _UNITS[units]
    name_row = lines[3].split("\t")
    if len(name_row) < 2 or name_row[0].strip() != "Frame#":
        raise StorageError("marker-name row must start with 'Frame#'", path, 4)
    names = [n.strip() for n in name_row[2:] if n.strip()]
    if len(set(names)) != len(names):
        raise StorageError("duplicate marker names", path, 4)
    try:
        n_markers = int(meta["NumMarkers"])
    except (KeyError, ValueError):
        n_markers = len(names)
    if n_markers != len(names):
        raise StorageError(f"NumMarkers={n_markers} but {len(names)} names", path, 4, "NumMarkers")
    M = len(names)
    times, pos, valid = [], [], []
    for lineno, l in enumerate(lines[5:], start=6):
        if not l.strip():
            continue
        parts = l.split("\t")
        if len(parts) > 2 + 3 * M and any(p.strip() for p in parts[2 + 3 * M:]):
            raise StorageError(f"expected at most {2 + 3 * M} fields, got {len(parts)}", path, lineno)
        parts = parts + [""] * (2 + 3 * M - len(parts))
        try:
            times.append(float(parts[1]))
        except ValueError:
            raise StorageError(f"bad time {parts[1]!r}", path, lineno, "Time") from None
        row = np.full((M, 3), np.nan)
        ok = np.zeros(M, dtype=bool)
        for k in range(M):
            trip = [s.strip() for s in parts[2 + 3 * k: 5 + 3 * k]]
            if any(s == "" for s in trip):
                continue
            try:
                xyz = [float(s) for s in trip]
            except ValueError:
                raise StorageError(f"bad coordinate in {trip!r}", path, lineno, names[k]) from None
            if all(math.isfinite(x) for x in xyz):
                row[k] = np.array(xyz) * scale if scale != 1.0 else xyz
                ok[k] = True
        pos.append(row)
        valid.append(ok)
    if not times:
        raise StorageError("no data rows", path)
    t = np.array(times)
    if np.any(np.diff(t) <= 0):
        raise StorageError("time column is not strictly increasing", path, None, "Time")
    return MarkerTrajectory(t, names, np.array(pos).reshape(len(t), M, 3), np.array(valid).reshape(len(t), M))


# -- GRF tables ---------------------------------------------------------------


def _grf_labels(side):
    return ([f"{side}_force_v{a}" for a in "xyz"], [f"{side}_cop_p{a}" for a in "xyz"],
            [f"{side}_moment_m{a}" for a in "xyz"])


def grf_to_table(grf: GrfTrajectory, name="grf") -> TimeSeriesTable:
    labels, cols = [], []
    for side in sorted(grf.feet):
        rec = grf.feet[side]
        fl, cl, ml = _grf_labels(side)
        labels += fl + cl + ml
        cols += [rec.force, rec.cop, rec.moment]
    values = np.column_stack(cols) if cols else np.zeros((len(grf.times), 0))
    return TimeSeriesTable.from_columns(name, grf.times, labels, values)


def write_grf(grf: GrfTrajectory, path) -> None:
    write_storage(grf_to_table(grf), path)


def read_grf(path, contact_bodies: dict) -> GrfTrajectory:
    """Read a GRF table; ``contact_bodies`` maps side ("r"/"l") to the loaded body."""
    table = read_storage(path, to_radians=False)
    feet = {}
    for side in ("r", "l"):
        fl, cl, ml = _grf_labels(side)
        present = [l in table.column_labels for l in fl + cl]
        if not any(present):
            continue
        if not all(present):
            missing = [l for l in fl + cl if l not in table.column_labels]
            raise StorageError(f"incomplete GRF columns for side {side!r}: missing {missing}", path)
        if side not in contact_bodies:
            raise StorageError(f"GRF side {side!r} has no contact body in the model", path)
        moment = (table.select(ml) if all(l in table.column_labels for l in ml)
                  else np.zeros((len(table.rows), 3)))
        feet[side] = FootRecord(contact_bodies[side], table.select(fl), table.select(cl), moment)
    if not feet:
        raise StorageError("no GRF columns found (expected r_force_vx, ... or l_force_vx, ...)", path)
    return GrfTrajectory(table.times.copy(), feet)


# -- model documents -----------------------------------------------------------

_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

MODEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["format_version", "bodies", "muscles", "markers"],
    "properties": {
        "format_version": {"const": 1},
        "gravity": _VEC3,
        "reserve_optimal_force": {"oneOf": [{"type": "number"},
                                            {"type": "array", "items": {"type": "number"}}]},
        "reference_pose": {"type": "array", "items": {"type": "number"}},
        "template_height": {"type": "number"},
        "contact_bodies": {"type": "object", "additionalProperties": {"type": "string"}},
        "bodies": {"type": "array", "minItems": 1, "items": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name", "parent", "joint_type", "mass"],
            "properties": {
                "name": {"type": "string"},
                "parent": {"type": ["string", "null"]},
                "joint_type": {"type": "string"},
                "joint_axis": _VEC3,
                "offset_in_parent": _VEC3,
                "mass": {"type": "number"},
                "com_local": _VEC3,
                "inertia_local": {"type": "array", "minItems": 3, "maxItems": 3, "items": _VEC3},
                "joint_range": {"type": "array", "items": {
                    "type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}},
            },
        }},
        "muscles": {"type": "array", "minItems": 1, "items": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name", "f_max", "l_opt", "v_max", "path"],
            "properties": {
                "name": {"type": "string"},
                "f_max": {"type": "number"},
                "l_opt": {"type": "number"},
                "v_max": {"type": "number"},
                "fl_width": {"type": ["number", "null"]},
                "fv_shape": {"type": "number"},
                "path": {"type": "array", "items": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["body", "point"],
                    "properties": {"body": {"type": "string"}, "point": _VEC3},
                }},
            },
        }},
        "markers": {"type": "array", "items": {
            "type": "object",
            "additionalProperties": False,
            "required": ["name", "body", "local_offset"],
            "properties": {
                "name": {"type": "string"},
                "body": {"type": "string"},
                "local_offset": _VEC3,
                "weight": {"type": "number"},
            },
        }},
    },
}


class DocumentError(ValueError):
    """Schema or validation failure with field-path diagnostics."""

    def __init__(self, diagnostics, path=None):
        self.diagnostics = list(diagnostics)
        self.path = None if path is None else str(path)
        prefix = f"{self.path}: " if self.path else ""
        super().__init__(prefix + "; ".join(self.diagnostics))


def schema_diagnostics(doc, schema) -> list:
    validator = jsonschema.Draft7Validator(schema)
    out = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path))):
        loc = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)
        loc = loc.lstrip(".") or "<root>"
        if err.validator == "additionalProperties":
            extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
            for k in extra:
                out.append(f"{loc + '.' if loc != '<root>' else ''}{k}: unknown key {k!r}")
        else:
            out.append(f"{loc}: {err.message}")
    return out


def model_from_dict(doc) -> Model:
    diags = schema_diagnostics(doc, MODEL_SCHEMA)
    if diags:
        raise DocumentError(diags)
    bodies = [BodySegment(
        name=b["name"],
        parent=b["parent"],
        joint_type=b["joint_type"],
        joint_axis=b.get("joint_axis", [0.0, 0.0, 1.0]),
        offset_in_parent=b.get("offset_in_parent", [0.0, 0.0, 0.0]),
        mass=b["mass"],
        com_local=b.get("com_local", [0.0, 0.0, 0.0]),
        inertia_local=b.get("inertia_local", np.zeros((3, 3))),
        joint_range=b.get("joint_range"),
    ) for b in doc["bodies"]]
    muscles = [HillMuscleParams(
        name=m["name"],
        f_max=m["f_max"],
        l_opt=m["l_opt"],
        v_max=m["v_max"],
        path=[(p["body"], p["point"]) for p in m["path"]],
        fl_width=m.get("fl_width", 0.45),
        fv_shape=m.get("fv_shape", 0.3),
    ) for m in doc["muscles"]]
    markers = [MarkerDef(k["name"], k["body"], k["local_offset"], k.get("weight", 1.0))
               for k in doc["markers"]]
    ndof = sum(b.ndof for b in bodies)
    ref = doc.get("reference_pose")
    if ref is not None and len(ref) != ndof:
        raise DocumentError([f"reference_pose: expected {ndof} values, got {len(ref)}"])
    tau_opt = doc.get("reserve_optimal_force", 1.0)
    if isinstance(tau_opt, list) and len(tau_opt) != ndof:
        raise DocumentError([f"reserve_optimal_force: expected {ndof} values, got {len(tau_opt)}"])
    return Model(
        bodies=bodies,
        muscles=muscles,
        markers=markers,
        gravity=doc.get("gravity", [0.0, -9.81, 0.0]),
        reserve_optimal_force=tau_opt,
        reference_pose=ref,
        template_height=doc.get("template_height"),
        contact_bodies=doc.get("contact_bodies", {}),
    )


def _list(a):
    return [float(x) for x in np.asarray(a, dtype=float).ravel()]


def model_to_dict(model: Model) -> dict:
    doc = {
        "format_version": 1,
        "gravity": _list(model.gravity),
        "reserve_optimal_force": _list(model.reserve_optimal_force),
        "reference_pose": _list(model.reference_pose),
        "bodies": [],
        "muscles": [],
        "markers": [],
    }
    if model.template_height is not None:
        doc["template_height"] = float(model.template_height)
    if model.contact_bodies:
        doc["contact_bodies"] = dict(sorted(model.contact_bodies.items()))
    for b in model.bodies:
        d = {
            "name": b.name,
            "parent": b.parent,
            "joint_type": b.joint_type,
            "joint_axis": _list(b.joint_axis),
            "offset_in_parent": _list(b.offset_in_parent),
            "mass": float(b.mass),
            "com_local": _list(b.com_local),
            "inertia_local": [_list(r) for r in np.asarray(b.inertia_local)],
        }
        if b.joint_range is not None:
            d["joint_range"] = [list(r) for r in b.joint_range]
        doc["bodies"].append(d)
    for m in model.muscles:
        doc["muscles"].append({
            "name": m.name,
            "f_max": m.f_max,
            "l_opt": m.l_opt,
            "v_max": m.v_max,
            "fl_width": None if math.isinf(m.fl_width) else m.fl_width,
            "fv_shape": m.fv_shape,
            "path": [{"body": b, "point": _list(p)} for b, p in m.path],
        })
    for k in model.markers:
        doc["markers"].append({"name": k.name, "body": k.body,
                               "local_offset": _list(k.local_offset), "weight": k.weight})
    return doc


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise StorageError(f"invalid JSON: {e.msg}", path, e.lineno) from None


def read_model(path, validate: bool = True) -> Model:
    """Load a model document; schema and invariant failures raise :class:`DocumentError`."""
    doc = _load_json(path)
    try:
        model = model_from_dict(doc)
    except DocumentError as e:
        raise DocumentError(e.diagnostics, path) from None
    if validate:
        problems = validate_model(model)
        if problems:
            raise DocumentError([str(v) for v in problems], path)
    return model


def write_model(model: Model, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(model_to_dict(model), f, indent=2)
        f.write("\n")


def read_config(path):
    from .config import read_config as _read

    return _read(path)


__all__ = [
    "DocumentError", "ModelError", "StorageError", "TimeSeriesTable",
    "read_storage", "write_storage", "read_trc", "write_trc", "read_grf", "write_grf",
    "grf_to_table", "read_model", "write_model", "model_from_dict", "model_to_dict",
    "read_config", "schema_diagnostics",
]
