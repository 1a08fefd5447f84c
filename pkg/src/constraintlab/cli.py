"""Command-line experiment harness.

Verbs:
  gen     write a scenario dataset as CSV
  run     run one (scenario, model, mode) experiment, write a JSON report
  report  flatten report JSONs into one summary CSV

Exit codes: 0 success, 1 usage error, 2 data error. A ``--config`` file
holds ``key=value`` lines with the same keys as the flags (plus run
overrides); explicit flags win over file values.
"""

import argparse
import sys

from .errors import DataError, UsageError
from .learners import save_model
from .reporting import render_report, summarize_reports
from .scenarios import (
    RunConfig,
    VALID_COMBOS,
    coerce_overrides,
    generate_dataset,
    run_scenario,
    valid_combinations_text,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        raise UsageError(message)


def _read_config_file(path):
    values = {}
    try:
        with open(path) as fh:
            for raw in fh:
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise UsageError(f"config line {line!r} is not key=value")
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    return values


_RUN_KEYS = ("scenario", "model", "mode", "seed", "out", "save_model")
_GEN_KEYS = ("scenario", "seed", "n", "ambiguous_frac", "out")


def _merge_config(args, keys):
    if not args.config:
        return {}
    values = _read_config_file(args.config)
    leftovers = {}
    for key, value in values.items():
        norm = key.replace("-", "_")
        if norm in keys:
            if getattr(args, norm, None) is None:
                setattr(args, norm, value)
        else:
            leftovers[norm] = value
    return leftovers


def _build_parser():
    parser = _Parser(prog="constraintlab", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    gen = sub.add_parser("gen", help="generate a scenario dataset CSV")
    gen.add_argument("--scenario", choices=sorted(VALID_COMBOS))
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--n", type=int, default=None,
                     help="rows (per environment for env-ensemble)")
    gen.add_argument("--ambiguous-frac", dest="ambiguous_frac", type=float, default=None)
    gen.add_argument("--out", default=None)
    gen.add_argument("--config", default=None)

    run = sub.add_parser("run", help="run an experiment, write a JSON report")
    run.add_argument("--scenario", choices=sorted(VALID_COMBOS))
    run.add_argument("--model", choices=("forest", "linear", "mlp"))
    run.add_argument("--mode", choices=("baseline", "posthoc", "intrinsic"))
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="parameter override (repeatable)")
    run.add_argument("--save-model", dest="save_model", default=None)
    run.add_argument("--config", default=None)

    rep = sub.add_parser("report", help="summarize report JSONs into a CSV table")
    rep.add_argument("inputs", nargs="*", help="report JSON paths")
    rep.add_argument("--out", default=None)
    rep.add_argument("--config", default=None)
    return parser


def _cmd_gen(args):
    _merge_config(args, _GEN_KEYS)
    if args.scenario is None:
        raise UsageError("gen requires --scenario")
    if args.out is None:
        raise UsageError("gen requires --out")
    seed = int(args.seed) if args.seed is not None else 42
    n = int(args.n) if args.n is not None else 500
    frac = float(args.ambiguous_frac) if args.ambiguous_frac is not None else 0.15
    dataset = generate_dataset(args.scenario, seed, n, frac)
    dataset.to_csv(args.out)
    return 0


def _cmd_run(args):
    leftovers = _merge_config(args, _RUN_KEYS)
    for key in ("scenario", "model", "mode"):
        if getattr(args, key) is None:
            raise UsageError(f"run requires --{key}")
    if args.out is None:
        raise UsageError("run requires --out")
    overrides = dict(leftovers)
    overrides.update(coerce_overrides(args.overrides))
    config = RunConfig(
        scenario=args.scenario,
        model=args.model,
        mode=args.mode,
        seed=int(args.seed) if args.seed is not None else 42,
        overrides=overrides,
    )
    doc, model = run_scenario(config, return_model=True)
    with open(args.out, "w", newline="") as fh:
        fh.write(render_report(doc))
    if args.save_model:
        save_model(model, args.save_model)
    return 0


def _cmd_report(args):
    _merge_config(args, ("out",))
    if args.out is None:
        raise UsageError("report requires --out")
    summarize_reports(args.inputs, args.out)
    return 0


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verb == "gen":
            return _cmd_gen(args)
        if args.verb == "run":
            return _cmd_run(args)
        return _cmd_report(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
