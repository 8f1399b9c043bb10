"""``ratenav`` command line: train, eval, compare, genmaps and score.

Outputs land under ``$RATENAV_OUTPUT_ROOT`` (default: the working
directory) unless a path is given explicitly. Every command writes the
fully resolved configuration it ran with next to its outputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import evaluation as ev
from .config import ConfigError, RunConfig, format_config, load_config, substream
from .train import DATA_DIR, Trainer, layout_hash, resume
from .world import MapFormatError, MapValidationError, format_world_text, load_scenario

log = logging.getLogger("ratenav")

OUTPUT_ROOT_ENV = "RATENAV_OUTPUT_ROOT"

EXIT_OK, EXIT_FAULT, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "."))


def _out_path(given: str | None, default: str) -> Path:
    if given:
        return Path(given)
    return output_root() / default


def _load_cfg(path: str | None, seed: int | None = None) -> tuple[RunConfig, Path | None]:
    if path is None:
        cfg = RunConfig()
        base = None
    else:
        cfg = load_config(path)
        base = Path(path).resolve().parent
        m = cfg.world.map
        if not m.startswith("builtin:") and not Path(m).is_absolute():
            # archive an absolute map path so replays do not depend on the cwd
            cfg.world.map = str((base / m).resolve())
    if seed is not None:
        cfg.run.seed = seed
    return cfg.validate(), base


def _scenario(spec: str) -> ev.Scenario:
    if spec.startswith("builtin:"):
        return load_scenario(DATA_DIR / f"{spec.split(':', 1)[1]}.scn")
    return load_scenario(spec)


# ----------------------------------------------------------------------
# Checkpoints
# ----------------------------------------------------------------------

def resolve_checkpoint(spec: str) -> tuple[Path, Path | None]:
    """Checkpoint file for ``spec`` and the run directory it belongs to, if any.

    A run directory resolves to its selected final policy, falling back to
    its latest checkpoint.
    """
    path = Path(spec)
    if path.is_dir():
        summary = path / "summary.json"
        ident = None
        if summary.exists():
            data = json.loads(summary.read_text())
            ident = data.get("final_policy") or data.get("latest_checkpoint")
        if ident is None:
            index = path / "checkpoints" / "index.json"
            if not index.exists():
                raise UsageError(f"{path}: no checkpoints found")
            ident = json.loads(index.read_text())[-1]["ident"]
        return path / "checkpoints" / f"{ident}.ckpt", path
    if not path.exists():
        raise UsageError(f"checkpoint not found: {path}")
    run_dir = path.parent.parent if path.parent.name == "checkpoints" else None
    return path, run_dir


def _policy_and_cfg(spec: str, cfg_path: str | None) -> tuple[ev.CheckpointPolicy, RunConfig]:
    ckpt, run_dir = resolve_checkpoint(spec)
    if cfg_path is None and run_dir is not None and (run_dir / "config.resolved.cfg").exists():
        cfg_path = str(run_dir / "config.resolved.cfg")
    cfg, _ = _load_cfg(cfg_path)
    return ev.CheckpointPolicy.load(ckpt, expected_hash=layout_hash(cfg)), cfg


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------

def cmd_train(args) -> int:
    if args.resume:
        run_dir = Path(args.resume)
        if not (run_dir / "resume.pkl").exists():
            raise UsageError(f"{run_dir}: nothing to resume (no resume.pkl)")
        trainer = resume(run_dir)
    else:
        if not args.config:
            raise UsageError("train needs --config or --resume")
        cfg, base = _load_cfg(args.config, args.seed)
        if args.steps is not None:
            cfg.run.total_steps = args.steps
        default = Path(cfg.run.output_dir) / f"{Path(args.config).stem}-s{cfg.run.seed}"
        run_dir = Path(args.out) if args.out else (default if default.is_absolute() else output_root() / default)
        if (run_dir / "metrics.csv").exists() or (run_dir / "resume.pkl").exists():
            raise UsageError(f"{run_dir} already holds a run; use --resume or another --out")
        trainer = Trainer(cfg, run_dir, base)
        trainer.run()
    summary = trainer.summary()
    print(json.dumps({"run_dir": str(run_dir), **summary}, indent=1))
    return EXIT_OK


def cmd_eval(args) -> int:
    policy, cfg = _policy_and_cfg(args.checkpoint, args.config)
    label = Path(policy.path).stem
    if args.baseline:
        if policy.reward_mode != args.baseline:
            raise UsageError(f"--baseline {args.baseline} given but the checkpoint was trained "
                             f"with reward mode '{policy.reward_mode}'")
        label = f"{args.baseline}:{label}"
    if args.suite:
        suite = Path(args.suite)
        files = sorted(suite.glob("*.scn")) if suite.is_dir() else [suite]
        if not files:
            raise UsageError(f"no .scn files in {suite}")
        scenarios = [load_scenario(f) for f in files]
    else:
        rng = substream(args.map_seed if args.map_seed is not None else cfg.run.seed, "eval-maps")
        scenarios = ev.generate_cluttered_maps(args.generate, args.density, rng, args.clearance,
                                               cfg.world.room_width, cfg.world.room_height,
                                               cfg.world.footprint_radius, cfg.world.goal_tolerance)
    speeds = args.speed or [cfg.world.v_max]
    out = _out_path(args.out, f"eval-{label.replace(':', '-')}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.cfg").write_text(format_config(cfg))
    reports = ev.evaluate_suite(policy, scenarios, speeds, cfg, out, c=policy.header.get("c", 1.5),
                                obs_diag=policy.obs_diag, label=label, plots=not args.no_plots)
    for speed, rep in reports.items():
        print(rep.summary_text(label))
    return EXIT_OK


def cmd_compare(args) -> int:
    pol_a, cfg = _policy_and_cfg(args.a, args.config)
    pol_b, _ = _policy_and_cfg(args.b, args.config)
    scn = _scenario(args.scenario)
    speed = args.speed or cfg.world.v_max
    cmp = ev.corner_comparison(pol_a, pol_b, scn, cfg, speed, obs_diag=pol_a.obs_diag)
    out = _out_path(args.out, f"compare-{scn.name}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.cfg").write_text(format_config(cfg))
    la, lb = args.label_a, args.label_b
    ev.write_paired_trace(cmp, out / "vc_paired.csv")
    ev.write_trace(cmp.log_a, out / f"trace_{la}.csv")
    ev.write_trace(cmp.log_b, out / f"trace_{lb}.csv")
    text = cmp.summary_text(la, lb)
    (out / "summary.txt").write_text(text)
    ev.plot_vc({la: cmp.log_a, lb: cmp.log_b}, out / "vc_compare.svg")
    ev.plot_trajectories(scn.world_map, {la: cmp.log_a, lb: cmp.log_b}, out / "trajectories.svg")
    print(text, end="")
    return EXIT_OK


def cmd_genmaps(args) -> int:
    rng = substream(args.seed, "eval-maps")
    maps = ev.generate_cluttered_maps(args.count, args.density, rng, args.clearance, args.width, args.height)
    out = _out_path(args.out, f"maps-d{args.density:g}-s{args.seed}")
    out.mkdir(parents=True, exist_ok=True)
    for scn in maps:
        (out / f"{scn.name}.scn").write_text(format_world_text(scn))
    print(f"wrote {len(maps)} scenarios to {out}")
    return EXIT_OK


def cmd_score(args) -> int:
    rep = ev.read_scores(args.scores)
    text = rep.summary_text()
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


# ----------------------------------------------------------------------
# Parser
# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ratenav", description=__doc__.splitlines()[0])
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a policy")
    t.add_argument("--config", help="INI run configuration")
    t.add_argument("--seed", type=int, help="override run.seed")
    t.add_argument("--steps", type=int, help="override run.total_steps")
    t.add_argument("--out", help="run directory")
    t.add_argument("--resume", metavar="RUN_DIR", help="continue an interrupted run")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a scenario suite")
    e.add_argument("--checkpoint", required=True, help="checkpoint file or run directory")
    e.add_argument("--config", help="configuration (default: the run's resolved config)")
    src = e.add_mutually_exclusive_group()
    src.add_argument("--suite", help="directory of .scn files or a single .scn")
    src.add_argument("--generate", type=int, default=100, help="number of generated maps (default 100)")
    e.add_argument("--density", type=float, default=0.1)
    e.add_argument("--clearance", type=float, default=0.6)
    e.add_argument("--map-seed", type=int)
    e.add_argument("--speed", type=float, action="append", help="max linear speed; repeat for several")
    e.add_argument("--baseline", choices=["distance-only"], help="evaluate as the distance-only ablation")
    e.add_argument("--out", help="output directory")
    e.add_argument("--no-plots", action="store_true")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("compare", help="paired change-rate traces of two checkpoints on one scenario")
    c.add_argument("--a", required=True, help="first checkpoint or run directory")
    c.add_argument("--b", required=True, help="second checkpoint or run directory")
    c.add_argument("--scenario", default="builtin:corner")
    c.add_argument("--config")
    c.add_argument("--speed", type=float)
    c.add_argument("--label-a", default="A")
    c.add_argument("--label-b", default="B")
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    g = sub.add_parser("genmaps", help="write procedurally generated scenarios")
    g.add_argument("--count", type=int, default=100)
    g.add_argument("--density", type=float, default=0.1)
    g.add_argument("--clearance", type=float, default=0.6)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--width", type=float, default=8.0)
    g.add_argument("--height", type=float, default=8.0)
    g.add_argument("--out")
    g.set_defaults(func=cmd_genmaps)

    s = sub.add_parser("score", help="re-score a scores.csv")
    s.add_argument("scores")
    s.add_argument("--out", help="write the summary here too")
    s.set_defaults(func=cmd_score)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError, MapFormatError, MapValidationError) as exc:
        print(f"ratenav {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        print(f"ratenav {args.command}: interrupted", file=sys.stderr)
        return EXIT_FAULT
    except Exception as exc:
        log.exception("%s failed", args.command)
        print(f"ratenav {args.command}: fault: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
