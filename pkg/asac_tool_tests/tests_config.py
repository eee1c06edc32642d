"""
Tests: Configuration files
"""

import os
import tempfile
import unittest

from asac_tool.errors import ConfigError
from asac_tool.helpers.helpers_config import (
    format_config,
    parse_config_text,
    parse_overrides,
    read_config_file,
)


class TestParseConfigText(unittest.TestCase):
    """
    Unit tests for the `parse_config_text` function.
    """

    def test_comments_blanks_and_last_wins(self):
        """
        Test a file with comments, blank lines and a repeated key.

        :assert: Comments are skipped and the last value wins.
        """
        values = parse_config_text(
            "# experiment\n\nseed = 3\ncost.values = 1, 2\nseed=4\n"
        )
        self.assertEqual(values, {"seed": "4", "cost.values": "1, 2"})

    def test_malformed_line_names_location(self):
        """
        Test a line without a separator.

        :assert: ConfigError names the source and line.
        """
        with self.assertRaises(ConfigError) as context:
            parse_config_text("seed = 1\nnot a pair\n", source="run.cfg")
        self.assertIn("run.cfg:2", str(context.exception))

    def test_format_round_trip(self):
        """
        Test rendering a mapping and parsing it again.

        :assert: The mapping is restored and keys are sorted.
        """
        values = {"seed": "1", "mode": "static"}
        text = format_config(values)
        self.assertEqual(text, "mode = static\nseed = 1\n")
        self.assertEqual(parse_config_text(text), values)


class TestReadConfigFile(unittest.TestCase):
    """
    Unit tests for the `read_config_file` function.
    """

    def test_read_file(self):
        """
        Test reading a config file from disk.

        :assert: Its pairs are returned.
        """
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "run.cfg")
            with open(path, "w", encoding="utf-8") as file:
                file.write("cost.lambda = 0.5\n")
            self.assertEqual(read_config_file(path), {"cost.lambda": "0.5"})

    def test_missing_file_raises(self):
        """
        Test an empty and a non-existent path.

        :assert: ConfigError is raised for both.
        """
        with self.assertRaises(ConfigError):
            read_config_file("")
        with self.assertRaises(ConfigError):
            read_config_file(os.path.join("no", "such", "file.cfg"))


class TestParseOverrides(unittest.TestCase):
    """
    Unit tests for the `parse_overrides` function.
    """

    def test_overrides(self):
        """
        Test command-line overrides.

        :assert: Pairs are split on the first '=' and stripped; a pair
        without '=' raises ConfigError.
        """
        self.assertEqual(
            parse_overrides(["seed=2", " metrics = auroc,auprc "]),
            {"seed": "2", "metrics": "auroc,auprc"},
        )
        self.assertEqual(parse_overrides(None), {})
        with self.assertRaises(ConfigError):
            parse_overrides(["seed"])


if __name__ == "__main__":
    unittest.main()
