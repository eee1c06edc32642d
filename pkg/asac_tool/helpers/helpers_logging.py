"""
Helper functions for logging.

One process-wide logger is shared by the CLI, training and the harness.
Worker processes running repeated seeds append to the same rotating
file; records carry the process name.
"""

import logging
import os
from datetime import date
from logging.handlers import RotatingFileHandler

from asac_tool import __title__, BYTES_IN_MB

LOG_FORMAT = "%(asctime)s - %(processName)s - %(levelname)s - %(message)s"
LOG_MAX_BYTES = 5 * BYTES_IN_MB
LOG_BACKUP_COUNT = 5

_logger: logging.Logger | None = None


def default_log_filename(day: date | None = None) -> str:
    """
    ``asac-tool_<YYYY_MM_DD>.log`` for ``day`` (today by default).
    """
    day = date.today() if day is None else day
    return f"{__title__}_{day.strftime('%Y_%m_%d')}.log"


def get_default_log_filepath() -> str:
    """
    Generate the absolute path to the default log file.
    :return: A path in the working directory.
    """
    return os.path.join(os.getcwd(), default_log_filename())


def get_logger(
    name: str = __title__,
    *,
    filepath: str | None = None,
    force_create: bool = False,
    verbosity: int = logging.DEBUG,
    quiet: bool | None = None,
) -> logging.Logger:
    """
    Get the logger instance
    :param name: The name of the logger.
    :param filepath: The absolute path to the log file. Defaults to
    ``get_default_log_filepath()``.
    :param force_create: Rebuild the handlers even if a logger exists.
    :param verbosity: The verbosity of the logger.
    :param quiet: Drop every record when True; None keeps the current
    setting.
    :return: The shared logger.
    """
    global _logger

    if not _logger or force_create:
        filepath = get_default_log_filepath() if filepath is None else filepath
        if not filepath:
            raise ValueError("The log filepath is invalid or null")
        _logger = logging.getLogger(name)
        _logger.setLevel(verbosity)
        for handler in list(_logger.handlers):
            _logger.removeHandler(handler)
            handler.close()
        for handler in _build_handlers(filepath, verbosity):
            _logger.addHandler(handler)

    if quiet is not None:
        _logger.disabled = quiet
    return _logger


def _build_handlers(filepath: str, verbosity: int) -> list[logging.Handler]:
    formatter = logging.Formatter(LOG_FORMAT)
    handlers: list[logging.Handler] = [
        logging.StreamHandler(),
        RotatingFileHandler(
            filepath, maxBytes=LOG_MAX_BYTES, backupCount=LOG_BACKUP_COUNT
        ),
    ]
    for handler in handlers:
        handler.setLevel(verbosity)
        handler.setFormatter(formatter)
    return handlers


def logger_settings(logger: logging.Logger) -> tuple[str | None, bool]:
    """
    The rotating log file and quiet flag of ``logger``, so a worker
    process can rebuild the same logger with ``get_logger``.
    :param logger: The logger to inspect.
    :return: ``(filepath, quiet)``; the filepath is None when the logger
    writes to no rotating file.
    """
    filepath = next(
        (
            handler.baseFilename
            for handler in logger.handlers
            if isinstance(handler, RotatingFileHandler)
        ),
        None,
    )
    return filepath, logger.disabled is True
