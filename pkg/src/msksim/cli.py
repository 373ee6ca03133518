"""Command line entry point: ``msksim <subcommand> ...``.

Exit codes: 0 success, 2 invalid input or configuration, 3 stage failure,
4 sequence rejected by the quality filter.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline, storage
from .pipeline import EXIT_OK, EXIT_REJECTED, EXIT_STAGE, EXIT_VALIDATION, Pipeline
from .model import ModelError

log = logging.getLogger("msksim")


def _load_config(args):
    cfg = storage.read_config(args.config)
    if args.output is not None:
        cfg.output = Path(args.output)
    if args.jobs is not None:
        cfg.jobs = args.jobs
    pipeline.check_config(cfg)
    return cfg


def _run_stages(args, stages):
    cfg = _load_config(args)
    Pipeline(cfg, plot_export=args.plot_export).run(stages)
    return EXIT_OK


def cmd_synth(args):
    from .synth import synthesize

    model = storage.read_model(args.model)
    res = synthesize(model, args.duration, args.frame_rate, args.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    storage.write_trc(res.markers, out / "synth_markers.trc")
    storage.write_storage(
        storage.TimeSeriesTable.from_columns("synth_coordinates", res.kinematics.times,
                                             res.kinematics.names, res.kinematics.q),
        out / "synth_coordinates.sto")
    storage.write_storage(
        storage.TimeSeriesTable.from_columns("synth_torques", res.torques.times,
                                             res.torques.names, res.torques.tau),
        out / "synth_torques.sto")
    storage.write_storage(
        storage.TimeSeriesTable.from_columns("synth_activations", res.activations.times,
                                             res.activations.muscle_names,
                                             res.activations.activations),
        out / "synth_activations.sto")
    if res.grf is not None:
        storage.write_grf(res.grf, out / "synth_grf.sto")
    flagged = res.so_diagnostics.flagged_frames
    if flagged:
        log.warning("reference solve did not converge on frames %s", flagged)
    return EXIT_OK


def _sto_files(path):
    p = Path(path)
    if p.is_dir():
        return {f.stem: f for f in sorted(p.glob("*.sto"))}
    return {p.stem: p}


def cmd_metrics(args):
    preds, gts = _sto_files(args.pred), _sto_files(args.gt)
    if len(preds) == 1 and len(gts) == 1:
        pairs = [(next(iter(preds.values())), next(iter(gts.values())))]
    else:
        missing = sorted(set(preds) ^ set(gts))
        if missing:
            raise ValueError(f"sequences without a counterpart: {missing}")
        pairs = [(preds[k], gts[k]) for k in sorted(preds)]
    if not pairs:
        raise ValueError("no .sto files found")
    masks = None
    if args.mask is not None:
        mk = _sto_files(args.mask)
        masks = [next(iter(mk.values()))] if len(mk) == 1 and len(pairs) == 1 else \
            [mk.get(Path(p).stem) for p, _ in pairs]
    rows = pipeline.metrics_report(pairs, masks, per_channel=args.per_muscle)
    text = pipeline.write_report(rows, args.output)
    if args.output is None:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="msksim", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    for name in pipeline.STAGES + ("pipeline",):
        if name == "metrics":
            continue
        p = sub.add_parser(name, help=f"run the {name} stage" if name != "pipeline"
                           else "run every stage in order")
        p.add_argument("--config", required=True, help="pipeline configuration JSON")
        p.add_argument("--output", help="override the configured output directory")
        p.add_argument("--jobs", type=int, help="worker processes for static optimization")
        p.add_argument("--plot-export", action="store_true",
                       help="also write long-format (time, channel, value) tables")
        p.set_defaults(stages=pipeline.STAGES if name == "pipeline" else (name,))

    p = sub.add_parser("metrics", help="compare predicted and ground-truth activations")
    p.add_argument("pred", help="prediction .sto file or directory")
    p.add_argument("gt", help="ground-truth .sto file or directory")
    p.add_argument("--mask", help="validity mask .sto (nonzero = valid)")
    p.add_argument("--per-muscle", action="store_true", help="add per-channel rows")
    p.add_argument("--output", help="write the report here instead of stdout")
    p.add_argument("--config", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("synth", help="generate a synthetic ground-truth sequence")
    p.add_argument("--model", required=True)
    p.add_argument("--duration", type=float, default=5.0, help="seconds")
    p.add_argument("--frame-rate", type=float, default=30.0, help="Hz")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if hasattr(args, "func"):
            return args.func(args)
        return _run_stages(args, args.stages)
    except pipeline.Rejected as e:
        print(f"msksim: {e}", file=sys.stderr)
        return EXIT_REJECTED
    except pipeline.StageError as e:
        print(f"msksim: {e}", file=sys.stderr)
        return EXIT_STAGE
    except storage.DocumentError as e:
        print(f"msksim: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (pipeline.ConfigError, storage.StorageError, ModelError, ValueError, OSError) as e:
        print(f"msksim: {e}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
