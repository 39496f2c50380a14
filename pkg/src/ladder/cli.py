"""``ladder`` command line: surrogate-fit, bo-compare and run."""
import argparse
import os
import sys

from .errors import ConfigError, LadderError

EXIT_OK, EXIT_CONFIG, EXIT_RUN = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"ladder: error: {message}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)


def build_parser():
    p = _Parser(prog="ladder", description="Latent-space BO experiments on the expression benchmark.")
    p.add_argument("command", choices=("surrogate-fit", "bo-compare", "run"))
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--method", help="run: one method; bo-compare: comma-separated list")
    p.add_argument("--iters", type=int, help="BO iterations")
    p.add_argument("--seed", type=int, help="master seed (fallback: $LADDER_SEED, then 0)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--latent", help="'codebook' or a path to exported embeddings")
    p.add_argument("--workers", type=int, help="parallel worker processes")
    return p


def resolve_config(args, environ=os.environ):
    """Defaults < config file < LADDER_SEED (seed only) < flags."""
    from .experiments import ExperimentConfig, read_config_file

    values = {"experiment": args.command}
    if args.config:
        try:
            values.update(read_config_file(args.config))
        except OSError as exc:
            raise ConfigError("config", str(exc)) from None
        values["experiment"] = args.command
    if "seed" not in values and environ.get("LADDER_SEED"):
        values["seed"] = environ["LADDER_SEED"]
    if args.method is not None:
        values["methods" if args.command == "bo-compare" else "method"] = args.method
    for flag, key in (("iters", "iterations"), ("seed", "seed"), ("out", "out"),
                      ("latent", "latent"), ("workers", "workers")):
        v = getattr(args, flag)
        if v is not None:
            values[key] = str(v)
    return ExperimentConfig.from_mapping(values)


def main(argv=None):
    args = build_parser().parse_args(argv)
    from . import experiments as ex

    try:
        cfg = resolve_config(args)
        model = ex.load_latent(cfg)
    except ConfigError as exc:
        print(f"ladder: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LadderError, OSError) as exc:
        print(f"ladder: cannot load latent model: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if cfg.experiment == "surrogate-fit":
            path = ex.cmd_surrogate_fit(cfg, model)
            print(f"wrote {path}")
        elif cfg.experiment == "bo-compare":
            path, failures = ex.cmd_bo_compare(cfg, model)
            print(f"wrote {path}")
            for method, seed, err in failures:
                print(f"run failed: {method} seed {seed}: {err}", file=sys.stderr)
            if failures:
                return EXIT_RUN
        else:
            path, (x, y) = ex.cmd_single_run(cfg, model)
            print(f"wrote {path}")
            print(f"best: {y!r}\t{x}")
    except ConfigError as exc:
        print(f"ladder: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LadderError, ValueError, ArithmeticError, OSError) as exc:
        print(f"ladder: run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
