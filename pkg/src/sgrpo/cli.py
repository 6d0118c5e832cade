"""Command-line entry point: ``sgrpo run|compare|verify|tasks``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .config import load_config, load_task_spec
from .errors import SGRPOError, VerifierUnavailable
from .tasks import generate_tasks, save_tasks
from .verifier import ScorerKind, score


def _cmd_run(args) -> int:
    config = load_config(args.config)
    out = harness.run(config, output_dir=args.output_dir)
    print(f"wrote {out}")
    return 0


def _cmd_compare(args) -> int:
    report = harness.compare(args.dirs, final_window=args.final_window)
    print(report.to_text())
    if args.csv:
        Path(args.csv).write_text(report.to_csv())
    return 0


def _cmd_verify(args) -> int:
    config = load_config(args.config)
    prompts = generate_tasks(config.task)
    print(f"config ok: {len(config.variants)} variant(s) x {len(config.seeds)} seed(s), "
          f"{config.steps} steps, hash {config.config_hash()[:12]}")
    probe = prompts[0].target
    value = score(config.scorer, probe, probe)
    print(f"scorer {config.scorer.scorer_id} reachable: score(target, target) = {value}")
    if config.scorer.kind is not ScorerKind.REMOTE and value != 1.0:
        print("built-in scorer failed self-similarity check", file=sys.stderr)
        return 1
    return 0


def _cmd_tasks(args) -> int:
    spec = load_task_spec(args.spec)
    prompts = generate_tasks(spec)
    if args.out:
        save_tasks(prompts, args.out)
        print(f"wrote {len(prompts)} prompts to {args.out}")
    else:
        import json
        print(json.dumps([{"id": p.id, "label": p.context_label, "target": list(p.target)} for p in prompts]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgrpo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train every variant and seed in a config file")
    p.add_argument("config")
    p.add_argument("--output-dir", default=None, help="override [experiment] output_dir")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="tabulate results of one or more experiment directories")
    p.add_argument("dirs", nargs="*")
    p.add_argument("--csv", default=None, help="also write the table as CSV")
    p.add_argument("--final-window", type=int, default=100)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("verify", help="validate a config and probe its scorer")
    p.add_argument("config")
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("tasks", help="emit the task set of a config's [task] section as JSON")
    p.add_argument("spec")
    p.add_argument("-o", "--out", default=None)
    p.set_defaults(func=_cmd_tasks)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except VerifierUnavailable as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SGRPOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
