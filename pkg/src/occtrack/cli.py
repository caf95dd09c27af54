"""Command-line entry point: simulate, track, evaluate, selftest.

Exit codes: 0 success, 1 invalid input (arguments, files, configs),
2 failure while running.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("occtrack")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _resolve_scene(arg: str):
    from .simulator.scene import bundled_scene_path, load_scene

    p = Path(arg)
    if not p.exists():
        b = bundled_scene_path(arg)
        if b.exists():
            p = b
        else:
            raise FileNotFoundError(f"scene file not found: {arg}")
    return load_scene(p)


def cmd_simulate(args) -> int:
    from .acceptance import scene_with_seed
    from .seqio import write_sequence

    scene = _resolve_scene(args.scene)
    if args.seed is not None:
        scene = scene_with_seed(scene, args.seed)
    info = write_sequence(scene, args.out)
    log.info("wrote %d frames, %d tracks to %s", info["frames"], info["tracks"], info["dir"])
    return 0


def cmd_track(args) -> int:
    from .config import TrackerConfig, apply_overrides, load_config
    from .pipeline import Tracker
    from .seqio import FileSequence

    cfg = load_config(args.config) if args.config else TrackerConfig()
    cfg = apply_overrides(cfg, args.set)
    src = FileSequence(args.seq)
    tr = Tracker(src, cfg)
    for t in range(src.n_frames):
        tr.process_frame(src.frame(t))
        if args.verbose and t % 10 == 0:
            log.info("frame %d: %s", t, ", ".join(f"obj{o} {r.status}" for o, r in
                                                   ((o, tr.reports[o][-1]) for o in sorted(tr.reports))))
    tr.write_outputs(args.out)
    log.info("wrote poses, meshes and summary to %s", args.out)
    return 0


def cmd_evaluate(args) -> int:
    from .evaluation import evaluate_dirs

    results = evaluate_dirs(args.pred, args.gt, args.out, args.max_threshold)
    for m in results:
        log.info("object %d: ADD AUC %.2f, ADD-S AUC %.2f", m.object_id, m.add_auc, m.adds_auc)
    return 0


def cmd_selftest(args) -> int:
    from .acceptance import run_all

    only = set(args.only) if args.only else None
    results = run_all(only, emit=print)
    n_ok = sum(r.passed for r in results)
    print(f"{n_ok}/{len(results)} criteria passed")
    return 0 if n_ok == len(results) else 2


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="occtrack", description="Multi-object 6-DoF tracking on RGB-D sequences.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="render a scene file into a sequence directory")
    s.add_argument("--scene", required=True, help="scene YAML file or bundled scene name")
    s.add_argument("--out", required=True, help="output sequence directory")
    s.add_argument("--seed", type=int, help="override the scene's noise seed")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("track", help="track every object of a sequence directory")
    t.add_argument("--seq", required=True, help="sequence directory")
    t.add_argument("--out", required=True, help="output directory")
    t.add_argument("--config", help="tracker config YAML")
    t.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    t.set_defaults(func=cmd_track)

    e = sub.add_parser("evaluate", help="score predicted poses and meshes against ground truth")
    e.add_argument("--pred", required=True, help="tracker output directory")
    e.add_argument("--gt", required=True, help="sequence directory with ground truth")
    e.add_argument("--out", required=True, help="report directory")
    e.add_argument("--max-threshold", type=float, default=0.1, help="AUC threshold in meters")
    e.set_defaults(func=cmd_evaluate)

    st = sub.add_parser("selftest", help="run the acceptance checks")
    st.add_argument("--only", type=int, nargs="+", metavar="N", help="run only these criteria")
    st.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    from .config import ConfigError
    from .seqio import SequenceFormatError
    from .simulator.scene import SceneError

    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    if not args.verbose:
        logging.getLogger().setLevel(logging.WARNING)
        log.setLevel(logging.INFO)
    try:
        return args.func(args)
    except (ConfigError, SceneError, SequenceFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (np.linalg.LinAlgError, RuntimeError, ValueError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
