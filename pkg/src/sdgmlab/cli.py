"""Command-line surface: one subcommand per experiment runner.

Every subcommand reads an optional config file (flat `key = value` text)
plus flag overrides, runs, and writes its artifacts under the output
directory (the SDGM_LAB_OUT environment variable overrides --out).

Exit codes: 0 success, 1 usage error (bad flags, missing paths), 2
runtime failure (training divergence, malformed corpus, io trouble).
"""

import argparse
import os
import sys

from sdgmlab import harness
from sdgmlab.errors import ConfigError, InputError, ParseError

# subcommand -> (runner, config keys that must be set, flag that sets each)
_COMMANDS = {
    "gen-data": (harness.run_gen_data, []),
    "train-sup": (harness.run_train_sup, [("corpus", "--corpus")]),
    "train-semi": (harness.run_train_semi, [("corpus", "--corpus")]),
    "pretrain": (harness.run_pretrain, [("corpus", "--corpus")]),
    "eval": (harness.run_eval, [("corpus", "--corpus"), ("checkpoint", "--checkpoint")]),
    "self-train": (harness.run_self_train, [("corpus", "--corpus")]),
    "generate": (harness.run_generate, [("corpus", "--corpus"), ("checkpoint", "--checkpoint")]),
    "nn": (harness.run_nn, [("corpus", "--corpus"), ("checkpoint", "--checkpoint"),
                            ("query_word", "--word")]),
}

# convenience flags and the config key each one overrides
_NAMED_FLAGS = [
    ("--corpus", "corpus", "corpus directory (written by gen-data)"),
    ("--checkpoint", "checkpoint", "checkpoint directory to load"),
    ("--out", "out_dir", "output directory for artifacts"),
    ("--labels", "labels", "labelled-document budget"),
    ("--beta", "beta", "classifier loss weight before alpha scaling"),
    ("--epochs", "epochs", "training epoch budget"),
    ("--seeds", "seeds", "comma-separated seed list"),
    ("--kind", "dataset_kind", "gen-data corpus kind: class or twin"),
    ("--split", "eval_split", "split to evaluate: train, dev or test"),
    ("--word", "query_word", "query word for nearest neighbors"),
]


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract wants 1, so raise instead
    def error(self, message):
        raise _UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="sdgmlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="subcommand")

    def add_common(p: _Parser) -> None:
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       dest="assignments", help="override any config key")
        for flag, key, help_text in _NAMED_FLAGS:
            p.add_argument(flag, dest=f"flag_{key}", help=help_text, default=None)

    for name in _COMMANDS:
        add_common(sub.add_parser(name, help=f"run the {name} experiment"))

    gc = sub.add_parser("gradcheck",
                        help="finite-difference every differentiable op family")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-4)
    return parser


def _build_config(args) -> harness.ExperimentConfig:
    if args.config is not None:
        if not os.path.exists(args.config):
            raise _UsageError(f"missing --config path {args.config!r}")
        config = harness.read_config_file(args.config)
    else:
        config = harness.ExperimentConfig()
    overrides: dict[str, str] = {}
    for assignment in args.assignments:
        if "=" not in assignment:
            raise _UsageError(f"--set expects KEY=VALUE, got {assignment!r}")
        key, value = assignment.split("=", 1)
        overrides[key.strip()] = value
    for _, key, _ in _NAMED_FLAGS:
        value = getattr(args, f"flag_{key}")
        if value is not None:
            overrides[key] = value  # named flags win over --set
    return harness.apply_overrides(config, overrides)


def _check_required(command: str, config: harness.ExperimentConfig) -> None:
    for key, flag in _COMMANDS[command][1]:
        value = getattr(config, key)
        if not value:
            raise _UsageError(f"{command} needs {flag} (config key {key})")
        if key in ("corpus", "checkpoint") and not os.path.exists(value):
            raise _UsageError(f"{flag} path {value!r} does not exist")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise _UsageError("a subcommand is required")
        if args.command == "gradcheck":
            summary = harness.gradcheck_report(seed=args.seed)
            print(summary.format_text(args.tol))
            return 0 if summary.passed(args.tol) else 2
        config = _build_config(args)
        _check_required(args.command, config)
    except _UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ConfigError, ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # argparse --help
        return int(e.code or 0)

    runner = _COMMANDS[args.command][0]
    try:
        report, artifacts = runner(config)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(report)
    for name in sorted(artifacts):
        print(f"wrote {artifacts[name]}")
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
