"""Command line entry point: hill <command> [options]."""
import argparse
import sys

from .harness import (COMMANDS, ConfigError, ExperimentConfig, NumericFailure, dumps,
                      emit_plot_data, run, summary_csv)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

# what each command prints on stdout
PRIMARY_OUTPUT = {"discriminant": "discriminant", "recover": "recovery"}


def build_parser():
    p = argparse.ArgumentParser(prog="hill", description="Hill's equation laboratory")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON experiment config")
        s.add_argument("--spec", help="potential spec JSON")
        s.add_argument("--seed", type=int)
        s.add_argument("--out", help="output directory")
        s.add_argument("--jmax", type=int)
        s.add_argument("--n", type=int)
        s.add_argument("--tol", type=float)
        s.add_argument("--grid")
        if name == "discriminant":
            s.add_argument("--derivative", action="store_true", default=None)
        if name == "spectrum":
            s.add_argument("--oracle", action="store_true", default=None)
        if name == "gram":
            s.add_argument("--t", help="JSON list of t over the window -n..n")
        if name == "divisor-newton":
            s.add_argument("--gaps", type=int)
            s.add_argument("--max-iter", dest="max_iter", type=int)
        if name == "mc":
            s.add_argument("--trials", type=int)
            s.add_argument("--experiment")
    return p


def _config(args):
    opts = {k: v for k, v in vars(args).items() if k not in ("config", "command") and v is not None}
    if args.command == "recover" and "grid" in opts:
        try:
            opts["grid"] = int(opts["grid"])
        except ValueError:
            raise ConfigError([f"recover --grid must be an integer, got {opts['grid']!r}"]) from None
    if args.config:
        return ExperimentConfig.load(args.config, command=args.command, **opts)
    return ExperimentConfig.from_dict(dict(opts, command=args.command))


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        record = run(cfg)
    except ConfigError as e:
        for prob in e.problems:
            print(f"config error: {prob}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    kind = PRIMARY_OUTPUT.get(cfg.command)
    if kind:
        sys.stdout.write(emit_plot_data(record, kind))
    elif cfg.command == "mc":
        sys.stdout.write(summary_csv(record))
    elif cfg.command == "sample":
        for t in record.trials:
            sys.stdout.write(dumps(t) + "\n")
    else:
        sys.stdout.write(dumps(record.summary) + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
