"""Staged motion-to-muscle pipeline.

scale -> ik -> id -> so -> filter -> smooth -> metrics. Every stage reads the
previous stage's files from the output directory and writes its own, so
stages can be rerun individually.
"""

from __future__ import annotations

import json
import logging
import math
from pathlib import Path

import numpy as np

from . import storage
from .config import PipelineConfig
from .dynamics import TorqueTrajectory, inverse_dynamics, resample_grf
from .kinematics import KinematicTrajectory, differentiate, inverse_kinematics
from .metrics import EvalMask, SUITE, metric_suite
from .model import Model, check_model, scale_model
from .postprocess import accept_sequence, savgol_smooth
from .staticopt import ActivationTrajectory, solve_sequence
from .storage import TimeSeriesTable

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3
EXIT_REJECTED = 4

SCALED_MODEL = "scaled_model.json"
IK_COORDS = "ik_coordinates.sto"
IK_DIAG = "ik_diagnostics.json"
ID_TORQUES = "id_torques.sto"
SO_RAW = "so_activations_raw.sto"
SO_DIAG = "so_diagnostics.sto"
ACCEPTANCE = "acceptance.json"
ACTIVATIONS = "activations.sto"
METRICS = "metrics.tsv"

STAGES = ("scale", "ik", "id", "so", "filter", "smooth", "metrics")


class ConfigError(Exception):
    """Invalid configuration or inputs, detected before computing."""


class StageError(Exception):
    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {message}")


class Rejected(Exception):
    def __init__(self, decision):
        self.decision = decision
        super().__init__(f"sequence rejected: {decision.reason} "
                         f"({decision.statistic}={decision.value!r}, threshold {decision.threshold!r})")


def _dump_json(obj, path):
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return None
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [clean(v) for v in x]
        return x

    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(clean(obj), f, indent=2, sort_keys=True)
        f.write("\n")


def write_long_format(table: TimeSeriesTable, path):
    """Plot-ready long table: one ``time  channel  value`` row per entry."""
    lines = ["time\tchannel\tvalue"]
    for row in table.rows:
        t = repr(float(row[0]))
        for label, v in zip(table.labels, row[1:]):
            lines.append(f"{t}\t{label}\t{float(v)!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def check_config(cfg: PipelineConfig):
    """Check every referenced input up front; raises :class:`ConfigError`."""
    for key in ("model", "markers", "coordinates", "grf", "ground_truth"):
        p = getattr(cfg, key)
        if p is not None and not Path(p).is_file():
            raise ConfigError(f"{key} file not found: {p}")
    try:
        model = storage.read_model(cfg.model)
    except (storage.DocumentError, storage.StorageError) as e:
        raise ConfigError(str(e)) from None
    if model.contact_bodies and cfg.grf is None:
        raise ConfigError("model declares contact bodies "
                          f"{sorted(model.contact_bodies.values())} but no GRF file is configured")
    out = Path(cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigError(f"output directory not writable: {e}") from None
    return model


class Pipeline:
    def __init__(self, cfg: PipelineConfig, plot_export: bool = False):
        self.cfg = cfg
        self.out = Path(cfg.output)
        self.plot_export = plot_export

    def path(self, name) -> Path:
        return self.out / name

    def _require(self, stage, *names):
        for n in names:
            if not self.path(n).is_file():
                raise StageError(stage, f"missing input {self.path(n)} (run the previous stage first)")

    def model(self) -> Model:
        p = self.path(SCALED_MODEL)
        return storage.read_model(p) if p.is_file() else storage.read_model(self.cfg.model)

    def _export(self, table, name):
        if self.plot_export:
            write_long_format(table, self.path(Path(name).stem + "_long.tsv"))

    # -- stages --------------------------------------------------------------

    def scale(self):
        model = storage.read_model(self.cfg.model)
        if self.cfg.subject is not None:
            try:
                model = scale_model(model, self.cfg.subject)
            except ValueError as e:
                raise StageError("scale", str(e)) from None
        check_model(model)
        storage.write_model(model, self.path(SCALED_MODEL))
        return model

    def ik(self):
        model = self.model()
        cfg = self.cfg
        if cfg.markers is not None:
            markers = storage.read_trc(cfg.markers)
            traj, diag = inverse_kinematics(model, markers, model.reference_pose)
            times, q = traj.times, traj.q
            summary = {
                "source": "markers",
                "rms_marker_error": diag.rms_marker_error.tolist(),
                "max_marker_error": diag.max_marker_error.tolist(),
                "iterations": diag.iterations.tolist(),
                "converged": diag.converged.tolist(),
                "failed_frames": list(diag.failed_frames),
                "messages": {str(k): v for k, v in sorted(diag.messages.items())},
                "sequence_max_marker_error": diag.sequence_max_marker_error,
            }
        else:
            table = storage.read_storage(cfg.coordinates)
            missing = [n for n in model.dof_names if n not in table.labels]
            if missing:
                raise StageError("ik", f"coordinate file lacks columns {missing}")
            times, q = table.times, table.select(model.dof_names)
            summary = {"source": "coordinates", "failed_frames": [],
                       "sequence_max_marker_error": None}
        if cfg.frame_rate is not None:
            times, q = resample_uniform(times, q, cfg.frame_rate)
        table = TimeSeriesTable.from_columns("ik_coordinates", times, model.dof_names, q)
        storage.write_storage(table, self.path(IK_COORDS))
        _dump_json(summary, self.path(IK_DIAG))
        self._export(table, IK_COORDS)
        return table

    def _kinematics(self, model, stage):
        self._require(stage, IK_COORDS)
        table = storage.read_storage(self.path(IK_COORDS))
        q = table.select(model.dof_names)
        if len(q) < 3:
            raise StageError(stage, "need at least 3 frames")
        qd, qdd = differentiate(table.times, q)
        return KinematicTrajectory(table.times.copy(), q, qd, qdd, list(model.dof_names))

    def id(self):
        model = self.model()
        traj = self._kinematics(model, "id")
        grf = None
        if self.cfg.grf is not None:
            raw = storage.read_grf(self.cfg.grf, model.contact_bodies)
            try:
                grf = resample_grf(raw, traj.times)
            except ValueError as e:
                raise StageError("id", str(e)) from None
        elif model.contact_bodies:
            raise StageError("id", "model has contact bodies but no GRF file is configured")
        tau = np.zeros_like(traj.q)
        for k in range(len(traj.times)):
            ext = grf.frame(k) if grf is not None else ()
            tau[k] = inverse_dynamics(model, traj.q[k], traj.qdot[k], traj.qddot[k], ext)
        table = TimeSeriesTable.from_columns("id_torques", traj.times, model.dof_names, tau)
        storage.write_storage(table, self.path(ID_TORQUES))
        self._export(table, ID_TORQUES)
        return table

    def so(self):
        model = self.model()
        traj = self._kinematics(model, "so")
        self._require("so", ID_TORQUES)
        tt = storage.read_storage(self.path(ID_TORQUES))
        torques = TorqueTrajectory(tt.times.copy(), tt.select(model.dof_names), list(model.dof_names))
        try:
            acts, diag = solve_sequence(model, traj, torques, self.cfg.so, jobs=self.cfg.jobs)
        except ValueError as e:
            raise StageError("so", str(e)) from None
        table = TimeSeriesTable.from_columns("so_activations", acts.times, acts.muscle_names,
                                             acts.activations)
        storage.write_storage(table, self.path(SO_RAW))
        labels = ["constraint_violation", "objective", "converged", "iterations", "kkt"]
        labels += [f"reserve_{n}" for n in model.dof_names]
        rows = [[f.constraint_violation, f.objective_value, float(f.converged), float(f.iterations),
                 f.kkt, *f.reserve_torques] for f in diag.frames]
        storage.write_storage(
            TimeSeriesTable.from_columns("so_diagnostics", acts.times, labels, rows),
            self.path(SO_DIAG))
        self._export(table, SO_RAW)
        return table

    def filter(self):
        self._require("filter", IK_DIAG, SO_DIAG)
        with open(self.path(IK_DIAG), encoding="utf-8") as f:
            ik = json.load(f)
        sd = storage.read_storage(self.path(SO_DIAG), to_radians=False)
        violation = float(sd.column("constraint_violation").max())
        so_failed = np.flatnonzero(sd.column("converged") < 0.5).tolist()
        decision = accept_sequence(ik.get("sequence_max_marker_error"), violation,
                                   self.cfg.thresholds, ik.get("failed_frames", []), so_failed)
        record = decision.as_dict()
        record["max_marker_error"] = ik.get("sequence_max_marker_error")
        record["max_constraint_violation"] = violation
        record["so_flagged_frames"] = so_failed
        record["ik_failed_frames"] = ik.get("failed_frames", [])
        _dump_json(record, self.path(ACCEPTANCE))
        if not decision.accepted:
            raise Rejected(decision)
        return decision

    def smooth(self):
        self._require("smooth", SO_RAW, ACCEPTANCE)
        with open(self.path(ACCEPTANCE), encoding="utf-8") as f:
            if not json.load(f).get("accepted"):
                raise StageError("smooth", "sequence was rejected by the filter stage")
        raw = storage.read_storage(self.path(SO_RAW), to_radians=False)
        acts = ActivationTrajectory(raw.times.copy(), raw.values.copy(), list(raw.labels))
        smoothed = savgol_smooth(acts, self.cfg.smoothing)
        for flag in smoothed.flags:
            log.warning("smoothing: %s", flag)
        table = TimeSeriesTable(raw.name, raw.column_labels,
                                np.column_stack([raw.times, smoothed.activations]),
                                raw.in_degrees, list(raw.header))
        storage.write_storage(table, self.path(ACTIVATIONS))
        self._export(table, ACTIVATIONS)
        return table

    def metrics(self):
        if self.cfg.ground_truth is None:
            return None
        self._require("metrics", ACTIVATIONS)
        rows = metrics_report([(self.path(ACTIVATIONS), Path(self.cfg.ground_truth))])
        write_report(rows, self.path(METRICS))
        return rows

    def run(self, stages=STAGES):
        for s in stages:
            log.info("running stage %s", s)
            try:
                getattr(self, s)()
            except (StageError, Rejected):
                raise
            except (ValueError, OSError) as e:
                raise StageError(s, str(e)) from e


def resample_uniform(times, values, frame_rate):
    """Linear resampling onto ``t0 + k / frame_rate`` within the original span."""
    times = np.asarray(times, dtype=float)
    n = int(np.floor((times[-1] - times[0]) * frame_rate + 1e-9)) + 1
    grid = times[0] + np.arange(n) / frame_rate
    vals = np.column_stack([np.interp(grid, times, values[:, j]) for j in range(values.shape[1])])
    return grid, vals


# -- metrics report --------------------------------------------------------------


def align_tables(pred: TimeSeriesTable, gt: TimeSeriesTable, mask: TimeSeriesTable | None = None):
    """Intersect timestamps (within 1e-6 s); column sets must match exactly."""
    unmatched = sorted(set(pred.labels) ^ set(gt.labels))
    if unmatched:
        raise ValueError(f"column sets differ; unmatched labels: {unmatched}")
    labels = list(gt.labels)
    ip, ig = [], []
    j = 0
    for i, t in enumerate(pred.times):
        while j < len(gt.times) and gt.times[j] < t - 1e-6:
            j += 1
        if j < len(gt.times) and abs(gt.times[j] - t) <= 1e-6:
            ip.append(i)
            ig.append(j)
    if not ip:
        raise ValueError("prediction and ground truth share no timestamps")
    P = pred.select(labels)[ip]
    G = gt.select(labels)[ig]
    valid = np.ones(P.shape, dtype=bool)
    if mask is not None:
        missing = [l for l in labels if l not in mask.labels]
        if missing:
            raise ValueError(f"mask lacks columns {missing}")
        mt = {round(float(t), 6): k for k, t in enumerate(mask.times)}
        M = mask.select(labels)
        for r, i in enumerate(ip):
            k = mt.get(round(float(pred.times[i]), 6))
            valid[r] = False if k is None else M[k] > 0.5
    return pred.times[ip], labels, P, G, EvalMask(valid)


def metrics_report(pairs, mask_paths=None, per_channel=False):
    """Rows ``(sequence, channel, metric, value)``; an ``ALL`` sequence pools every entry."""
    rows = []
    pooled_p, pooled_g, pooled_v = [], [], []
    for k, (pp, gp) in enumerate(pairs):
        pred = storage.read_storage(pp, to_radians=False)
        gt = storage.read_storage(gp, to_radians=False)
        mask = None
        if mask_paths is not None and mask_paths[k] is not None:
            mask = storage.read_storage(mask_paths[k], to_radians=False)
        _, labels, P, G, m = align_tables(pred, gt, mask)
        seq = Path(pp).stem
        for name, value in metric_suite(P, G, m).items():
            rows.append((seq, "ALL", name, value))
        if per_channel:
            for c, label in enumerate(labels):
                for name, value in metric_suite(P[:, c], G[:, c], m.valid[:, c]).items():
                    rows.append((seq, label, name, value))
        pooled_p.append(P.ravel())
        pooled_g.append(G.ravel())
        pooled_v.append(m.valid.ravel())
    if len(pairs) > 1:
        P, G, V = (np.concatenate(x)[:, None] for x in (pooled_p, pooled_g, pooled_v))
        # DiffL1 is undefined across sequence boundaries; average the per-sequence values
        agg = metric_suite(P, G, V)
        diffs = [r[3] for r in rows if r[1] == "ALL" and r[2] == "DiffL1" and not math.isnan(r[3])]
        agg["DiffL1"] = float(np.mean(diffs)) if diffs else float("nan")
        for name in SUITE:
            rows.append(("ALL", "ALL", name, agg[name]))
    return rows


def write_report(rows, path=None):
    lines = ["sequence\tchannel\tmetric\tvalue"]
    lines += [f"{s}\t{c}\t{m}\t{float(v)!r}" for s, c, m, v in rows]
    text = "\n".join(lines) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    return text
