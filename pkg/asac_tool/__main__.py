"""
The entrypoint for the application.
"""

import argparse
import logging
import os
import sys
from argparse import Namespace
from typing import Callable, Sequence

from asac_tool import __title__, __version__
from asac_tool.errors import ConfigError
from asac_tool.harness import (
    TABLE_PRESETS,
    build_experiment_config,
    default_output_dir,
    evaluate_checkpoints,
    export_csv,
    reproduce_table,
    run_experiment,
    summarize_report,
    train_models,
)
from asac_tool.helpers.helpers_config import (
    parse_overrides,
    read_config_file,
)
from asac_tool.helpers.helpers_logging import (
    get_default_log_filepath,
    get_logger,
)
from asac_tool.synth import generate_dataset

EXIT_SUCCESS = 0
EXIT_CONFIG_ERROR = 2
EXIT_RUNTIME_ERROR = 3

# Flag destination -> configuration key.
SHORTHAND_FLAGS = {
    "seed": "seed",
    "output_dir": "output.dir",
    "lam": "cost.lambda",
    "iterations": "training.iterations",
    "repeats": "repeats",
    "workers": "workers",
}


def _validate_path(path: str) -> str:
    """
    Validate a directory argument.
    :param path:
    :return:
    """
    if not isinstance(path, str):
        raise argparse.ArgumentTypeError(
            "The directory specified is not a string."
        )
    if not os.path.isdir(path):
        raise argparse.ArgumentTypeError(
            f"The directory does not exist: {path}"
        )
    return path


def _positive_int(value: str) -> int:
    """
    Validate the value specified
    :param value:
    :return:
    """
    if value is None:
        raise ValueError("Value cannot be None")
    ivalue = int(value)
    if ivalue <= 0:
        raise argparse.ArgumentTypeError(
            f"'{value}' must be a positive integer."
        )
    return ivalue


def _config_arguments(with_output_dir: bool = True) -> argparse.ArgumentParser:
    """
    Options shared by the commands that build an experiment config.
    """
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument(
        "--config", type=str, help="Path to a key = value config file."
    )
    parent.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override one config key; may be repeated.",
    )
    parent.add_argument("--seed", type=int, help="Shorthand for 'seed'.")
    parent.add_argument(
        "--lambda",
        dest="lam",
        type=float,
        help="Shorthand for 'cost.lambda'.",
    )
    parent.add_argument(
        "--iterations",
        type=_positive_int,
        help="Shorthand for 'training.iterations'.",
    )
    if with_output_dir:
        parent.add_argument(
            "--output-dir", type=str, help="Shorthand for 'output.dir'."
        )
    return parent


def parse_arguments(argv: Sequence[str] | None = None) -> Namespace:
    """
    Parse command-line arguments using argparse.

    :param argv: Arguments to parse; defaults to ``sys.argv[1:]``.
    :returns: Parsed arguments.
    :rtype: Namespace
    """
    parser = argparse.ArgumentParser(
        prog=__title__,
        description="Train and evaluate active-sensing selector and "
        "predictor networks on time-series data.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument(
        "--version", action="version", version=f"%(prog)s {__version__}"
    )
    parser.add_argument(
        "--log-filepath",
        type=str,
        default=get_default_log_filepath(),
        help="Absolute path for the log file.",
    )
    parser.add_argument(
        "--quiet", action="store_true", help="Silence logging output."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser(
        "generate",
        parents=[_config_arguments(with_output_dir=False)],
        help="Write a synthetic dataset as CSV.",
    )
    generate.add_argument(
        "--preset",
        choices=sorted(TABLE_PRESETS),
        help="Start from the dataset settings of a table preset.",
    )
    generate.add_argument(
        "--output", type=str, required=True, help="Destination CSV path."
    )

    commands.add_parser(
        "train",
        parents=[_config_arguments()],
        help="Train a selector and predictor and save checkpoints.",
    )

    evaluate = commands.add_parser(
        "evaluate",
        parents=[_config_arguments()],
        help="Evaluate saved checkpoints on the held-out split.",
    )
    evaluate.add_argument(
        "--checkpoint-dir",
        type=_validate_path,
        required=True,
        help="Directory holding selector.json and predictor.json.",
    )

    run = commands.add_parser(
        "run",
        parents=[_config_arguments()],
        help="Train, evaluate and write the report in one go.",
    )
    run.add_argument(
        "--repeats", type=_positive_int, help="Shorthand for 'repeats'."
    )
    run.add_argument(
        "--workers", type=_positive_int, help="Shorthand for 'workers'."
    )

    reproduce = commands.add_parser(
        "reproduce",
        help="Run a synthetic table preset and write the table.",
    )
    reproduce.add_argument("table", choices=sorted(TABLE_PRESETS))
    reproduce.add_argument("--seed", type=int, required=True)
    reproduce.add_argument("--repeats", type=_positive_int)
    reproduce.add_argument("--workers", type=_positive_int)
    reproduce.add_argument("--iterations", type=_positive_int)
    reproduce.add_argument("--lambda", dest="lam", type=float)
    reproduce.add_argument(
        "--output-dir",
        type=str,
        help="Defaults to <output directory>/<table>.",
    )
    reproduce.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE"
    )

    report = commands.add_parser(
        "report", help="Summarize one or more report.json files."
    )
    report.add_argument("paths", nargs="+")

    return parser.parse_args(sys.argv[1:] if argv is None else argv)


def config_values(args: Namespace) -> dict[str, str]:
    """
    Merge preset, config file, ``--set`` overrides and shorthand flags,
    later sources winning.
    """
    values: dict[str, str] = {}
    if getattr(args, "preset", None):
        values.update(TABLE_PRESETS[args.preset])
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    values.update(parse_overrides(args.set))
    for flag, key in SHORTHAND_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = str(value)
    return values


def _generate(args: Namespace, logger: logging.Logger) -> None:
    config = build_experiment_config(config_values(args))
    if config.synthetic is None:
        raise ConfigError("'generate' needs a synthetic data source.")
    export_csv(
        generate_dataset(config.synthetic, logger=logger),
        args.output,
        logger=logger,
    )


def _train(args: Namespace, logger: logging.Logger) -> None:
    train_models(build_experiment_config(config_values(args)), logger=logger)


def _evaluate(args: Namespace, logger: logging.Logger) -> None:
    evaluate_checkpoints(
        build_experiment_config(config_values(args)),
        args.checkpoint_dir,
        logger=logger,
    )


def _run(args: Namespace, logger: logging.Logger) -> None:
    run_experiment(build_experiment_config(config_values(args)), logger=logger)


def _reproduce(args: Namespace, logger: logging.Logger) -> None:
    overrides = config_values(args)
    overrides.pop("seed", None)
    overrides.pop("output.dir", None)
    reproduce_table(
        args.table,
        args.seed,
        output_dir=args.output_dir
        or os.path.join(default_output_dir(), args.table),
        overrides=overrides,
        logger=logger,
    )


def _report(args: Namespace, logger: logging.Logger) -> None:
    for path in args.paths:
        if not os.path.isfile(path):
            raise FileNotFoundError(f"Report '{path}' does not exist.")
        print(summarize_report(path))


COMMANDS: dict[str, Callable[[Namespace, logging.Logger], None]] = {
    "generate": _generate,
    "train": _train,
    "evaluate": _evaluate,
    "run": _run,
    "reproduce": _reproduce,
    "report": _report,
}


def main(argv: Sequence[str] | None = None) -> int:
    """
    Main function to execute the script logic.

    :returns: The process exit code.
    """
    args: Namespace = parse_arguments(argv)
    if not args:
        raise ValueError("No arguments provided.")
    logger: logging.Logger = get_logger(
        filepath=args.log_filepath, quiet=args.quiet
    )
    if not logger:
        raise ValueError("Logger instance is invalid or null.")

    try:
        COMMANDS[args.command](args, logger)
    except ConfigError as exc:
        logger.exception(f"Configuration error: {exc}", exc_info=exc)
        return EXIT_CONFIG_ERROR
    except Exception as exc:  # pylint: disable=broad-exception-caught
        logger.exception(f"'{args.command}' failed: {exc}", exc_info=exc)
        return EXIT_RUNTIME_ERROR
    return EXIT_SUCCESS


if __name__ == "__main__":
    sys.exit(main())
