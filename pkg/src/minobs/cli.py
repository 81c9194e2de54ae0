"""Command-line front end.

    minobs run EXPERIMENT [--env PATH] [--observer PATH] [--observable PATH] ...
    minobs validate PATH [--env PATH]

``run`` exits 0 when the experiment passes (or is informational), 1 when it
fails, and 2 on an invalid document or usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any

from . import experiments as ex
from .envmodel import SpecInvalid, build_environment
from .observables import observable_from_doc
from .observer import build_observer

EXPERIMENTS = (
    "born-rule",
    "no-replication",
    "locc-audit",
    "objective-ignorance",
    "commutativity",
    "time-symmetry",
    "decomp-equivalence",
    "observe",
)

INFORMATIONAL = {"observe"}


class UsageError(Exception):
    pass


def _read_json(path: str | None, flag: str) -> Any:
    if path is None:
        raise UsageError(f"{flag} is required for this experiment")
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"{flag}: cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise SpecInvalid(f"not valid JSON ({exc.msg} at line {exc.lineno})", flag) from None


def run_experiment(args: argparse.Namespace) -> tuple[ex.Report, str | None]:
    """Dispatch one experiment; returns the report and, for sessions, the
    session CSV that replaces the report's own CSV form."""
    name = args.experiment
    optional_env = name == "locc-audit" and args.report is not None
    env_doc = _read_json(args.env, "--env") if not optional_env or args.env else None

    if name == "born-rule":
        obs_doc = _read_json(args.observable, "--observable")
        return ex.born_rule_experiment(env_doc, obs_doc, args.n_sort, args.n_draw, args.seed,
                                       ensemble=args.ensemble), None
    if name == "no-replication":
        return ex.no_replication_check(_read_json(args.observer, "--observer"), env_doc,
                                       args.cycles, args.seed), None
    if name == "locc-audit":
        observer_doc = _read_json(args.observer, "--observer")
        if args.report is not None:
            session = _read_json(args.report, "--report")
            pw = build_environment(env_doc).payload_width if env_doc is not None else None
        else:
            env = build_environment(env_doc)
            _, session = ex.observe_report(observer_doc, env, args.cycles, args.seed)
            pw = env.payload_width
        report = ex.locc_audit(session, observer_doc, pw)
        report.seed = args.seed
        return report, None
    if name == "objective-ignorance":
        obs_doc = _read_json(args.observable, "--observable")
        return ex.objective_ignorance_experiment(env_doc, obs_doc, args.trials, args.seed,
                                                 census=args.census, ensemble=args.ensemble,
                                                 jobs=args.jobs), None
    if name == "commutativity":
        pair = _read_json(args.observable, "--observable")
        if not isinstance(pair, list) or len(pair) != 2:
            raise SpecInvalid("expected a list of two observable documents", "--observable")
        return ex.commutativity_report(env_doc, pair[0], pair[1], args.trials, args.seed,
                                       jobs=args.jobs), None
    if name == "time-symmetry":
        return ex.time_symmetry_check(env_doc, args.steps, args.trials, args.seed), None
    if name == "decomp-equivalence":
        alt = _read_json(args.alt, "--alt")
        return ex.decompositional_equivalence_check(env_doc, alt, args.steps, args.seed), None
    if name == "observe":
        report, session = ex.observe_report(_read_json(args.observer, "--observer"), env_doc,
                                            args.cycles, args.seed)
        return report, session.to_csv()
    raise UsageError(f"unknown experiment {name!r}")


def cmd_run(args: argparse.Namespace) -> int:
    try:
        report, session_csv = run_experiment(args)
    except SpecInvalid as exc:
        print(f"error: invalid document: {exc}", file=sys.stderr)
        return 2
    except (UsageError, ValueError, ex.NoRecognizedConfigurations) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    if args.format == "json":
        text = report.to_json()
    else:
        text = session_csv if session_csv is not None else report.to_csv()
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)

    if args.experiment in INFORMATIONAL:
        return 0
    status = report.metrics.get("status", "pass" if report.passed else "fail")
    print(f"{args.experiment}: {status}", file=sys.stderr)
    return 0 if report.passed else 1


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        doc = _read_json(args.path, "path")
        if not isinstance(doc, dict):
            raise SpecInvalid("document must be a JSON object")
        if "num_dof" in doc:
            build_environment(doc)
        elif "memory_capacity_bits" in doc:
            pw = None
            if args.env:
                pw = build_environment(_read_json(args.env, "--env")).payload_width
            build_observer(doc, pw)
        elif "source" in doc:
            env = build_environment(_read_json(args.env, "--env"))
            observable_from_doc(doc, env)
        else:
            raise SpecInvalid("unrecognized document: expected num_dof, memory_capacity_bits or source")
    except SpecInvalid as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print("OK")
    return 0


def _positive(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="minobs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write its verdict document")
    run.add_argument("experiment", choices=EXPERIMENTS)
    run.add_argument("--env")
    run.add_argument("--observer")
    run.add_argument("--observable")
    run.add_argument("--alt", help="alternative labeling (decomp-equivalence)")
    run.add_argument("--report", help="session report to audit (locc-audit)")
    run.add_argument("--trials", type=_positive, default=10_000)
    run.add_argument("--cycles", type=_positive, default=1000)
    run.add_argument("--n-sort", type=_positive, default=100_000)
    run.add_argument("--n-draw", type=_positive, default=10_000)
    run.add_argument("--steps", type=_positive, default=1000)
    run.add_argument("--seed", type=_positive, default=0)
    run.add_argument("--ensemble", choices=ex.ENSEMBLE_MODES, default="uniform")
    run.add_argument("--census", action="store_true",
                     help="enumerate every component pattern (objective-ignorance)")
    run.add_argument("--out")
    run.add_argument("--format", choices=("json", "csv"), default="json")
    run.add_argument("--jobs", type=_positive, default=1)
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check an environment, observer or observable document")
    val.add_argument("path")
    val.add_argument("--env", help="environment document (needed for observables)")
    val.set_defaults(func=cmd_validate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
