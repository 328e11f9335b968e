"""Command line entry points for every pipeline stage.

Subcommands: gen-synthetic, simulate-clicks, plg, tsu, ile, eval, pipeline,
serve. Stage commands are thin wrappers over pipeline.run_pipeline driven by
a JSON config file. Log level comes from the CLICKLIFT_LOG_LEVEL environment
variable (default INFO).
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import dataio, synthgen
from .clicksim import simulate_frame_clicks
from .errors import ClickLiftError
from .pipeline import PipelineConfig, prepare_synthetic_inputs, run_pipeline
from .server import serve

log = logging.getLogger("clicklift")


def _setup_logging():
    level = os.environ.get("CLICKLIFT_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _load_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "workers", None) is not None:
        cfg.workers = args.workers
    return cfg


def cmd_gen_synthetic(args) -> int:
    if args.spec:
        spec = synthgen.load_scene_spec(args.spec)
        if args.seed is not None:
            spec.seed = args.seed
    else:
        spec = synthgen.random_scene_spec(
            seed=args.seed if args.seed is not None else 0,
            n_instances=args.instances,
            num_frames=args.frames,
            with_wall=args.with_wall,
        )
    seq = synthgen.generate_sequence(spec)
    synthgen.write_sequence(seq, args.out)
    prepare_synthetic_inputs(
        seq,
        args.out,
        click_error_range=args.click_error,
        prediction_corruption=args.pred_corruption,
        seed=spec.seed,
    )
    synthgen.save_scene_spec(spec, Path(args.out) / "scene_spec.json")
    total = sum(len(f.points) for f in seq.frames)
    log.info(
        "wrote %d frames (%d points, %d instances) to %s",
        len(seq.frames), total, len(spec.instances), args.out,
    )
    return 0


def cmd_simulate_clicks(args) -> int:
    paths = dataio.sequence_paths(args.sequence)
    manifest, frames = dataio.load_sequence(args.sequence)
    clicks = []
    for frame in frames:
        gt_path = paths["gt_labels"] / f"{frame.frame_id}.bin"
        if not gt_path.exists():
            raise ClickLiftError(f"no ground-truth labels for frame {frame.frame_id}")
        gt = dataio.read_labels(gt_path)
        clicks.extend(simulate_frame_clicks(frame, gt, args.error_range, args.seed))
    out = args.out or paths["clicks"]
    dataio.write_clicks(out, clicks)
    log.info("wrote %d clicks to %s", len(clicks), out)
    return 0


def _stage_command(stage):
    def run(args) -> int:
        cfg = _load_config(args)
        run_pipeline(cfg, stages=(stage,))
        return 0

    return run


def cmd_pipeline(args) -> int:
    cfg = _load_config(args)
    stages = tuple(s.strip() for s in args.stages.split(",")) if args.stages else None
    report = run_pipeline(cfg, stages=stages or ("plg", "tsu", "ile", "eval"))
    if report is not None and not args.quiet:
        print(report.to_table())
    return 0


def cmd_serve(args) -> int:
    cfg = _load_config(args)
    serve(cfg, port=args.port, host=args.host)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clicklift",
        description="BEV clicks to 3D instance pseudo labels: generation, "
        "refinement, evaluation, and an annotation service.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic sequence with GT")
    p.add_argument("--out", required=True, help="output sequence directory")
    p.add_argument("--spec", help="scene spec JSON (optional)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--frames", type=int, default=5)
    p.add_argument("--instances", type=int, default=8)
    p.add_argument("--with-wall", action="store_true")
    p.add_argument("--click-error", type=float, default=0.0)
    p.add_argument("--pred-corruption", type=float, default=0.1)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("simulate-clicks", help="write simulated clicks for a sequence")
    p.add_argument("--sequence", required=True)
    p.add_argument("--out", default=None, help="defaults to <sequence>/clicks.jsonl")
    p.add_argument("--error-range", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_simulate_clicks)

    for stage, text in (
        ("plg", "generate labels from clicks"),
        ("tsu", "update labels by temporal voxel voting"),
        ("ile", "replace labels with high-IoU predicted instances"),
        ("eval", "evaluate labels against ground truth"),
    ):
        p = sub.add_parser(stage, help=text)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.set_defaults(func=_stage_command(stage))

    p = sub.add_parser("pipeline", help="run several stages in order")
    p.add_argument("--config", required=True)
    p.add_argument("--stages", default=None, help="comma list, e.g. plg,tsu,eval")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("serve", help="run the annotation HTTP service")
    p.add_argument("--config", required=True)
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ClickLiftError as exc:
        log.error("%s", exc)
        return 2
    except json.JSONDecodeError as exc:
        log.error("bad JSON input: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
