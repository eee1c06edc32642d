"""
Helper functions for benchmarking
"""

import functools
import logging
import time

from asac_tool.helpers.helpers_logging import get_logger


def benchmark(func=None, *, logger: logging.Logger | None = None):
    """
    Log the wall-clock duration of each call at DEBUG.

    Usable bare (``@benchmark``) or as ``@benchmark(logger=...)``. The
    record goes to the ``logger`` keyword of the call when one is
    passed, else to ``logger``, else to the shared logger.
    :param func: The function to wrap.
    :param logger: Fallback logger instance.
    :return: The wrapped function.
    """
    if func is None:
        return functools.partial(benchmark, logger=logger)

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.perf_counter()
        result = func(*args, **kwargs)
        elapsed = time.perf_counter() - start_time
        active_logger = kwargs.get("logger") or logger or get_logger()
        active_logger.debug(
            f"{func.__name__} executed in {elapsed:.6f} seconds"
        )
        return result

    return wrapper
