"""Command-line entry point: ``pilotwave run|validate|resume|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .config import ConfigError, load_scenario, shipped_scenarios
from .runner import EXIT_ASSERTION, EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, RunManifest, resume_run, run_scenario


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pilotwave", description="Pilot-wave trajectory simulator.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    run = sub.add_parser("run", help="run a scenario (file path or shipped name)")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--seed", type=int, help="ensemble seed (overrides the config)")
    run.add_argument("--threads", type=int, default=1, help="trajectory worker threads")

    val = sub.add_parser("validate", help="check a scenario and list every error")
    val.add_argument("config")

    res = sub.add_parser("resume", help="continue a run from a checkpoint")
    res.add_argument("checkpoint")
    res.add_argument("--out", help="output directory (defaults to the checkpointed one)")
    res.add_argument("--threads", type=int, default=1)

    rep = sub.add_parser("report", help="summarize a run manifest")
    rep.add_argument("manifest")

    sub.add_parser("list", help="list shipped scenarios")
    return p


def _summary(man: RunManifest) -> str:
    lines = [f"{man.scenario} ({man.kind}): {man.status}", f"  config hash {man.config_hash[:16]}  version {man.code_version}"]
    for name, r in sorted(man.assertions.items()):
        mark = "pass" if r["passed"] else "FAIL"
        lines.append(f"  [{mark}] {name}: {r['value']} (limit {r['limit']})")
    keys = ("norm_drift_per_1000_steps", "energy_drift", "ks", "born_fractions", "collapse_time",
            "coherent_tracking_error", "velocity_field_error", "ehrenfest_residual", "max_speed")
    for k in keys:
        if k in man.metrics:
            lines.append(f"  {k}: {man.metrics[k]}")
    if man.failure:
        lines.append(f"  failure: {man.failure}")
    return "\n".join(lines)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.verb == "list":
            for name in shipped_scenarios():
                print(name)
            return EXIT_OK
        if args.verb == "validate":
            cfg = load_scenario(args.config)
            print(f"{args.config}: valid {cfg.kind} scenario, hash {cfg.hash()}")
            return EXIT_OK
        if args.verb == "run":
            if args.threads < 1:
                raise ConfigError(["--threads: must be at least 1"])
            cfg = load_scenario(args.config).with_overrides(seed=args.seed, out=args.out)
            man = run_scenario(cfg, threads=args.threads)
        elif args.verb == "resume":
            man = resume_run(args.checkpoint, out=args.out, threads=args.threads)
        else:
            path = Path(args.manifest)
            if path.is_dir():
                path = path / "manifest.json"
            man = RunManifest.from_json(json.loads(path.read_text()))
            print(_summary(man))
            return man.exit_code
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (CheckpointError, OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # model construction rejected the parameters (grid, Hamiltonian, modes)
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(_summary(man))
    return {"passed": EXIT_OK, "stopped": EXIT_OK, "assertion_failed": EXIT_ASSERTION}.get(man.status, EXIT_NUMERIC)


if __name__ == "__main__":
    sys.exit(main())
