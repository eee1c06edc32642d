"""
Tests: Save Outputs
"""

import json
import os
import tempfile
import unittest
from unittest.mock import MagicMock, mock_open, patch

import numpy as np

from asac_tool.helpers.helpers_files import (
    format_float,
    prepare_output_dir,
    write_csv,
    write_json,
)


class TestPrepareOutputDir(unittest.TestCase):
    """
    Unit tests for the `prepare_output_dir` function.
    """

    @patch("os.makedirs")
    def test_prepare_output_dir(self, mock_makedirs):
        """
        Test creating the output directory.

        :param mock_makedirs: Mock for `os.makedirs` to
        simulate directory creation.
        :assert: The absolute path is created and returned.
        """
        logger = MagicMock()
        path = prepare_output_dir("output", logger)
        self.assertEqual(path, os.path.abspath("output"))
        mock_makedirs.assert_called_once_with(
            os.path.abspath("output"), exist_ok=True
        )

    def test_prepare_output_dir_warns_on_existing_files(self):
        """
        Test preparing a directory that already holds outputs.

        :assert: Only a populated directory with ``warn_existing`` logs
        a warning, and its files are kept.
        """
        logger = MagicMock()
        with tempfile.TemporaryDirectory() as directory:
            prepare_output_dir(directory, logger, warn_existing=True)
            logger.warning.assert_not_called()
            stale = os.path.join(directory, "stale.json")
            with open(stale, "w", encoding="utf-8") as file:
                file.write("{}")
            prepare_output_dir(directory, logger)
            logger.warning.assert_not_called()
            prepare_output_dir(directory, logger, warn_existing=True)
            self.assertTrue(os.path.exists(stale))
        logger.warning.assert_called_once()

    def test_prepare_output_dir_invalid(self):
        """
        Test `prepare_output_dir` without a path or logger.

        :assert: ValueError is raised.
        """
        with self.assertRaises(ValueError):
            prepare_output_dir("", MagicMock())
        with self.assertRaises(ValueError):
            prepare_output_dir("output", None)


class TestWriteFiles(unittest.TestCase):
    """
    Unit tests for `write_json` and `write_csv`.
    """

    @patch("builtins.open", new_callable=mock_open)
    def test_write_json_converts_numpy(self, mock_file):
        """
        Test saving a document holding numpy values.

        :param mock_file: Mock for `open` to simulate file writing.
        :assert: The file is opened once and the JSON parses back.
        """
        logger = MagicMock()
        write_json(
            "report.json",
            {"rates": np.array([0.5, 1.0]), "seed": np.int64(3)},
            logger,
        )
        mock_file.assert_called_once_with("report.json", "w", encoding="utf-8")
        written = "".join(
            call.args[0] for call in mock_file().write.call_args_list
        )
        self.assertEqual(json.loads(written), {"rates": [0.5, 1.0], "seed": 3})

    def test_write_csv_exact_floats(self):
        """
        Test that floats survive a CSV round trip.

        :assert: Cells re-parse to the same float64 values and text
        cells are kept.
        """
        value = 0.1 + 0.2
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "rates.csv")
            write_csv(path, ["feature", "rate"], [["x1", value]], MagicMock())
            with open(path, "r", encoding="utf-8") as file:
                lines = file.read().splitlines()
        self.assertEqual(lines[0], "feature,rate")
        name, text = lines[1].split(",")
        self.assertEqual(name, "x1")
        self.assertEqual(float(text), value)
        self.assertEqual(format_float(value), text)


if __name__ == "__main__":
    unittest.main()
