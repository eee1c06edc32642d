"""
Helpers: Files
"""

import json
import logging
import os
from typing import Any, Iterable, Sequence

import numpy as np
import pandas as pd

FLOAT_FORMAT = "%.17g"


def format_float(value: float) -> str:
    """
    Render a float with 17 significant digits, which re-parses to the
    same float64.
    """
    return FLOAT_FORMAT % float(value)


def prepare_output_dir(
    output_dir: str, logger: logging.Logger, *, warn_existing: bool = False
) -> str:
    """
    Create the output directory.
    :param output_dir: Path to the output directory.
    :param logger: Logger instance for logging.
    :param warn_existing: Log a warning when the directory already has
    contents that this run may overwrite.
    :return: The absolute path.
    """
    if not output_dir:
        raise ValueError("The output directory is invalid or null.")
    if not logger:
        raise ValueError("The logger instance is invalid or null.")
    output_dir = os.path.abspath(output_dir)
    if warn_existing and os.path.isdir(output_dir) and os.listdir(output_dir):
        logger.warning(
            "Output directory %s is not empty; files will be overwritten",
            output_dir,
        )
    os.makedirs(output_dir, exist_ok=True)
    return output_dir


def _to_builtin(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_builtin(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_json(path: str, document: Any, logger: logging.Logger) -> None:
    """
    Save ``document`` as indented JSON (numpy values converted).
    """
    logger.info('Saving: "%s"', path)
    with open(path, "w", encoding="utf-8") as file:
        json.dump(_to_builtin(document), file, indent=4, sort_keys=True)
        file.write("\n")


def write_csv(
    path: str,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    logger: logging.Logger,
) -> None:
    """
    Save rows as CSV; floats use 17 significant digits so the file
    re-parses to the in-memory values.
    """
    rendered = [
        [
            format_float(cell)
            if isinstance(cell, (float, np.floating))
            else str(cell)
            for cell in row
        ]
        for row in rows
    ]
    logger.info('Saving: "%s"', path)
    pd.DataFrame(rendered, columns=list(header)).to_csv(
        path, index=False, lineterminator="\n"
    )
