"""Command-line entry point ``lab``.

Exit codes: 0 success, 1 other lab errors, 2 parse/validation failures,
3 numerical solver failures, 4 guard violations.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, io
from .errors import GuardError, LabError, SolverError
from .harness import ExperimentConfig, corollary_suite, run_experiment, write_suite
from .instances import RandomInstanceSpec, generate_random_instance

EXIT_PARSE, EXIT_SOLVER, EXIT_GUARD = 2, 3, 4


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    if args.output:
        cfg.output = Path(args.output)
    result, files = run_experiment(cfg)
    head = {k: result[k] for k in ("outcome", "margin", "degenerate_tag", "j", "modal_value_error") if k in result}
    if cfg.kind == "corollary_suite":
        head = {r["row"]: f'{r["expected_count"]}/{r["hypothesis_satisfied"]}' for r in result["summary"]}
    print(json.dumps(head, sort_keys=True))
    for f in files:
        print(f"wrote {f}")
    return 0


def _cmd_gen(args) -> int:
    data = io.read_json(args.spec)
    io.validate(data, "instance_spec", str(args.spec))
    try:
        spec = RandomInstanceSpec.from_json(data)
    except ValueError as exc:
        raise io.ParseError(f"{args.spec}: {exc}") from exc
    if args.seed is not None:
        spec = RandomInstanceSpec(spec.n_states, spec.n_actions, spec.k, spec.gamma_range, spec.reward_range,
                                  spec.support, args.seed)
    momdp = generate_random_instance(spec)
    path = io.write_json(args.output, io.momdp_to_json(momdp))
    print(f"wrote {path}")
    return 0


def _cmd_suite(args) -> int:
    result = corollary_suite(args.seed, args.count, args.risk_count, args.budget)
    files = write_suite(result, args.output)
    sys.stdout.write(io.csv_text(["row", "expected", "satisfied", "anomalies"],
                                 [[r["row"], r["expected_count"], r["hypothesis_satisfied"], len(r["anomalies"])]
                                  for r in result["summary"]]))
    for f in files:
        print(f"wrote {f}")
    return 0


def _cmd_validate(args) -> int:
    kind = io.validate_document(io.read_json(args.file), str(args.file))
    print(f"{args.file}: valid {kind}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lab", description="Reward expressivity lab.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", type=Path)
    run.add_argument("-o", "--output", type=Path, help="override the output directory")
    run.set_defaults(func=_cmd_run)
    gen = sub.add_parser("gen", help="generate a random MOMDP from an instance spec")
    gen.add_argument("spec", type=Path)
    gen.add_argument("-o", "--output", type=Path, required=True)
    gen.add_argument("--seed", type=int)
    gen.set_defaults(func=_cmd_gen)
    suite = sub.add_parser("suite", help="run a named experiment suite")
    suite.add_argument("name", choices=["corollaries"])
    suite.add_argument("--seed", type=int, required=True)
    suite.add_argument("--count", type=int, default=50)
    suite.add_argument("--risk-count", type=int, default=None)
    suite.add_argument("--budget", type=int, default=200)
    suite.add_argument("-o", "--output", type=Path, required=True)
    suite.set_defaults(func=_cmd_suite)
    val = sub.add_parser("validate", help="schema-check a JSON file")
    val.add_argument("file", type=Path)
    val.set_defaults(func=_cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except io.ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except GuardError as exc:
        print(f"guard violation: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except LabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
