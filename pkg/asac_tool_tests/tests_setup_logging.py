"""
Tests: Setup Logging
"""

import logging
import os
import tempfile
import unittest
from datetime import date
from logging import Logger
from unittest.mock import MagicMock

from asac_tool.helpers.helpers_benchmark import benchmark
from asac_tool.helpers.helpers_logging import (
    LOG_FORMAT,
    default_log_filename,
    get_default_log_filepath,
    get_logger,
    logger_settings,
)


class TestSetupLogging(unittest.TestCase):
    """
    Unit tests for the `get_logger` function.
    """

    def test_logger_setup(self):
        """
        Test that `get_logger` returns a properly
        configured Logger instance.

        :assert: The logger is an instance of `Logger`
        and has handlers attached.
        """
        logger = get_logger()
        self.assertIsInstance(logger, Logger)
        self.assertTrue(logger.hasHandlers())

    def test_force_create_replaces_handlers(self):
        """
        Test forcing a new logger with an explicit log file.

        :assert: Exactly one stream and one file handler are attached,
        and the file handler writes to the requested path.
        """
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "run.log")
            logger = get_logger(filepath=path, force_create=True)
            logger = get_logger(filepath=path, force_create=True)
            self.assertEqual(len(logger.handlers), 2)
            files = [
                h.baseFilename
                for h in logger.handlers
                if isinstance(h, logging.FileHandler)
            ]
            self.assertEqual(files, [os.path.abspath(path)])
            for handler in list(logger.handlers):
                handler.close()
            get_logger(force_create=True)

    def test_empty_filepath_raises(self):
        """
        Test forcing a logger with an empty log path.

        :assert: ValueError is raised.
        """
        with self.assertRaises(ValueError):
            get_logger(filepath="", force_create=True)

    def test_default_log_filepath(self):
        """
        Test the default log file location.

        :assert: It lies in the working directory and names the tool.
        """
        path = get_default_log_filepath()
        self.assertEqual(os.path.dirname(path), os.getcwd())
        self.assertTrue(os.path.basename(path).startswith("asac-tool_"))

    def test_default_log_filename(self):
        """
        Test the log file name for a fixed day.

        :assert: The tool name and the zero-padded date.
        """
        self.assertEqual(
            default_log_filename(date(2024, 3, 7)), "asac-tool_2024_03_07.log"
        )

    def test_records_name_the_process(self):
        """
        Test the record format used by every handler.

        :assert: It carries the process name and the level.
        """
        self.assertIn("%(processName)s", LOG_FORMAT)
        logger = get_logger()
        formats = {h.formatter._fmt for h in logger.handlers}
        self.assertEqual(formats, {LOG_FORMAT})

    def test_quiet_logger(self):
        """
        Test silencing the shared logger.

        :assert: ``quiet=True`` disables it, a plain call keeps the
        setting and ``quiet=False`` enables it again.
        """
        logger = get_logger(quiet=True)
        self.assertTrue(logger.disabled)
        self.assertTrue(get_logger().disabled)
        self.assertFalse(get_logger(quiet=False).disabled)

    def test_logger_settings(self):
        """
        Test reading back the settings a worker needs to rebuild the
        shared logger.

        :assert: The rotating file path and quiet flag are returned; a
        logger without a file handler gives no path.
        """
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "worker.log")
            logger = get_logger(filepath=path, force_create=True, quiet=True)
            self.assertEqual(
                logger_settings(logger), (os.path.abspath(path), True)
            )
            for handler in list(logger.handlers):
                handler.close()
            get_logger(force_create=True, quiet=False)
        self.assertEqual(logger_settings(MagicMock()), (None, False))


class TestBenchmark(unittest.TestCase):
    """
    Unit tests for the `benchmark` decorator.
    """

    def test_benchmark_logs_duration(self):
        """
        Test a decorated function with an explicit logger.

        :assert: The result passes through and one debug line names the
        function.
        """
        logger = MagicMock()

        @benchmark(logger=logger)
        def double(value):
            return 2 * value

        self.assertEqual(double(4), 8)
        logger.debug.assert_called_once()
        self.assertIn("double", logger.debug.call_args[0][0])

    def test_call_logger_wins(self):
        """
        Test a decorated function that takes a ``logger`` keyword.

        :assert: The timing line goes to the logger of the call, not to
        the fallback.
        """
        fallback, call_logger = MagicMock(), MagicMock()

        @benchmark(logger=fallback)
        def measure(*, logger):
            logger.info("measuring")

        measure(logger=call_logger)
        call_logger.debug.assert_called_once()
        fallback.debug.assert_not_called()


if __name__ == "__main__":
    unittest.main()
