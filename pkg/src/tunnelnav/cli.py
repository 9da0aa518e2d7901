"""Command-line entry point: ``tunnelnav run | validate-config | export-map | batch``."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import SimConfig, load_config
from .errors import ConfigError, InvalidSpecError
from .runner import EXIT_COLLISION, EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION, MissionSummary, Simulation, rebuild_map


def _load(path: str) -> SimConfig:
    try:
        return load_config(path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")


def _exit_code(summary: MissionSummary) -> int:
    if summary.termination == "numeric":
        return EXIT_NUMERIC
    if summary.termination == "collision" or summary.collision_count > 0:
        return EXIT_COLLISION
    return EXIT_OK


def _apply_overrides(config: SimConfig, seed=None, duration=None) -> SimConfig:
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if duration is not None:
        changes["duration"] = duration
    try:
        return config.replace(**changes) if changes else config
    except InvalidSpecError as exc:
        raise ConfigError(str(exc)) from exc


def _parse_seeds(text: str) -> range:
    try:
        lo, hi = (int(v) for v in text.split("..", 1))
    except ValueError:
        raise ConfigError(f"--seeds expects A..B, got {text!r}")
    if hi < lo or lo < 0:
        raise ConfigError(f"--seeds range {text!r} is empty or negative")
    return range(lo, hi + 1)


def cmd_run(args) -> int:
    config = _apply_overrides(_load(args.config), args.seed, args.duration)
    out = Path(args.out)
    sim = Simulation(config, out, keep_records=False)
    summary = sim.run()
    print(f"runtime {summary.runtime:.2f} s", file=sys.stderr)
    if summary.termination == "numeric":
        print(f"numeric abort: {getattr(sim, 'abort_reason', '')}", file=sys.stderr)
    print(summary.to_json(), end="")
    return _exit_code(summary)


def cmd_validate(args) -> int:
    _load(args.config)
    print("ok")
    return EXIT_OK


def cmd_export_map(args) -> int:
    run_dir = Path(args.telemetry)
    if not (run_dir / "scans.csv").exists() or not (run_dir / "map.meta").exists():
        print(f"error: {run_dir} has no scans.csv/map.meta", file=sys.stderr)
        return EXIT_VALIDATION
    mapping_config = _load(args.config).mapping if args.config else SimConfig().mapping
    path = rebuild_map(run_dir, mapping_config, args.output)
    print(path)
    return EXIT_OK


def _batch_one(job) -> tuple[int, dict]:
    config, seed, out = job
    summary = Simulation(config.replace(seed=seed), out, keep_records=False).run()
    data = json.loads(summary.to_json())
    data["seed"] = seed
    return _exit_code(summary), data


def cmd_batch(args) -> int:
    config = _apply_overrides(_load(args.config), None, args.duration)
    seeds = _parse_seeds(args.seeds)
    jobs = [(config, s, Path(args.out) / f"seed_{s}" if args.out else None) for s in seeds]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            results = list(pool.map(_batch_one, jobs))
    else:
        results = [_batch_one(job) for job in jobs]
    worst = EXIT_OK
    for code, data in results:
        print(json.dumps(data, sort_keys=True))
        worst = max(worst, code)
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tunnelnav", description="Simulated MAV tunnel navigation missions.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one mission")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--duration", type=float)
    p.add_argument("--out", default="run_out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("validate-config", help="check a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("export-map", help="rebuild map.pgm from the scans logged in a run directory")
    p.add_argument("--telemetry", required=True, metavar="DIR")
    p.add_argument("--config", help="config whose mapping section to use (default: built-in defaults)")
    p.add_argument("--output", help="PGM path (default: DIR/map.pgm)")
    p.set_defaults(func=cmd_export_map)

    p = sub.add_parser("batch", help="run one mission per seed and print a JSON line each")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", required=True, metavar="A..B")
    p.add_argument("--duration", type=float)
    p.add_argument("--out", help="write per-seed outputs under this directory")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_batch)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
