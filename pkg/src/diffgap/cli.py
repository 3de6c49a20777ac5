"""Command-line entry points: ``diffgap run`` and ``diffgap validate``.

Exit codes: 0 success, 1 config error, 2 numeric error. The default output
root comes from the DIFFGAP_OUT environment variable when --out and the
config's out_dir are both absent.
"""

import argparse
import os
import sys

from .experiments import ConfigError, ExperimentConfig, run, validate
from .metrics import InvalidCovarianceError
from .sampling import NumericDivergenceError

ENV_OUT = "DIFFGAP_OUT"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 1)
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(1)


def build_parser():
    parser = _Parser(prog="diffgap",
                     description="Toy diffusion generalization-gap experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    runp = sub.add_parser("run", help="execute an experiment config")
    runp.add_argument("config", help="experiment config JSON (or a manifest.json)")
    runp.add_argument("--out", help="output directory (overrides config and "
                                    f"${ENV_OUT})")
    runp.add_argument("--seed", type=int, help="override the config seed")
    runp.add_argument("--threads", type=int, help="worker threads (recorded; "
                                                  "kernels are vectorized in-process)")

    valp = sub.add_parser("validate", help="static feasibility check, no execution")
    valp.add_argument("config", help="experiment config JSON")
    return parser


def _resolve_out(args, config):
    if args.out:
        return args.out
    if config.out_dir:
        return config.out_dir
    root = os.environ.get(ENV_OUT)
    if root:
        return os.path.join(root, config.experiment)
    return os.path.join("runs", config.experiment)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = ExperimentConfig.from_file(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    if args.command == "validate":
        violations = validate(config)
        if violations:
            print(f"{len(violations)} violation(s):")
            for v in violations:
                print(f"  - {v}")
        else:
            print("config ok: no violations")
        return 0

    if args.seed is not None:
        config.seed = args.seed
    out_dir = _resolve_out(args, config)
    try:
        manifest = run(config, out_dir=out_dir, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NumericDivergenceError as exc:
        print(f"numeric error in sampler ({config.experiment}): {exc}", file=sys.stderr)
        return 2
    except InvalidCovarianceError as exc:
        print(f"numeric error in metrics ({config.experiment}): {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {len(manifest['outputs']) + 1} files to {out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
