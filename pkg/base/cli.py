import argparse
import logging
import sys
from typing import Sequence

import coloredlogs
import sentry_sdk

from base.config import Configuration
from base.experiment import ExperimentConfig
from base.runner import ExperimentRunner
from schrodinger.errors import ConfigurationError, LabError

logger = logging.getLogger("schroedinger-lab")

LOG_FORMAT = "%(asctime)s - %(threadName)s - %(levelname)s - %(message)s"

# subcommand -> check it runs
SUBCOMMANDS = {
    "rho": "rho",
    "cover": "cover",
    "spectrum": "spectrum",
    "t1-check": "t1",
    "verify": "verify",
    "bmo-norm": "bmo",
    "op-norm": "norms",
}


def setup_logging(debug: bool, disable_colors: bool) -> None:
    level = logging.DEBUG if debug else logging.INFO
    if disable_colors:
        logging.basicConfig(level=level, format=LOG_FORMAT, force=True)
    else:
        coloredlogs.install(level=level, fmt=LOG_FORMAT)


def _experiment_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", dest="experiment", type=str, help="JSON experiment config")
    parser.add_argument("--out", type=str, help="output directory of the artifacts")
    parser.add_argument("--seed", type=int, help="override the experiment seed")
    parser.add_argument("--grid", type=str, help="grid as 'n,m,L' (dimension, points per axis, box half-width)")
    parser.add_argument("--preset", type=str, help="potential preset, e.g. 'constant:1' or 'harmonic'")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="schrodinger_lab",
                                     description="numerical checks of the Schroedinger operator L = -Laplace + V")
    parser.add_argument("--ini", dest="ini_file", type=str, help="runtime configuration file (INI)")
    parser.add_argument("--show_effective_config", action="store_true", help="display the final config")
    parser.add_argument("--show_ini", action="store_true", help="show the effective config as ini variables")
    parser.add_argument("--disable_colors", action="store_true", help="disable colors in logging output")
    parser.add_argument("--debug", action="store_true", help="debug logging")

    commands = parser.add_subparsers(dest="command", required=True)
    run = commands.add_parser("run", help="run every check of an experiment config")
    run.add_argument("config", type=str, help="JSON experiment config")
    _experiment_options(run)
    for name, check in SUBCOMMANDS.items():
        _experiment_options(commands.add_parser(name, help=f"run the {check} check only"))
    return parser


def load_runtime_config(args: argparse.Namespace) -> Configuration:
    config = Configuration()
    if args.ini_file:
        config.load_config_file(args.ini_file)
    config.load_from_environment_variables()
    if args.debug:
        config.debug = True
    if args.disable_colors:
        config.disable_colors = True
    return config


def load_experiment(args: argparse.Namespace, config: Configuration) -> ExperimentConfig:
    if args.command == "run":
        if args.experiment and args.experiment != args.config:
            raise ConfigurationError("run: give the experiment config either as argument or with --config")
        source = args.config
    else:
        source = args.experiment
    experiment = ExperimentConfig.load(source) if source else ExperimentConfig(output_dir=config.output_dir,
                                                                               seed=config.default_seed)
    checks = [SUBCOMMANDS[args.command]] if args.command in SUBCOMMANDS else None
    return experiment.with_overrides(output_dir=args.out, seed=args.seed, grid=args.grid, preset=args.preset,
                                     checks=checks)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_runtime_config(args)
    except ValueError as e:
        setup_logging(args.debug, True)
        logger.error("invalid runtime configuration: %s", e)
        return 1
    setup_logging(config.debug, config.disable_colors)

    if args.show_effective_config or args.show_ini:
        config.show_effective_config(show_as_ini_variables=args.show_ini)

    if config.sentry_enabled:
        logger.info("starting with sentry DSN %s" % config.sentry_dsn)
        if not config.sentry_dsn:
            logger.fatal("sentry enabled but no DSN set")
            return 1
        sentry_sdk.init(config.sentry_dsn)

    try:
        experiment = load_experiment(args, config)
        runner = ExperimentRunner(experiment, config)
    except (LabError, OSError) as e:
        logger.error("invalid experiment: %s", e)
        return 1
    return runner.run()


if __name__ == "__main__":
    sys.exit(main())
