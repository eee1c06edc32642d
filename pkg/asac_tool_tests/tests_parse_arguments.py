"""
Tests: Parse Arguments
"""

import argparse
import unittest
from unittest.mock import MagicMock, patch

from asac_tool.__main__ import (
    EXIT_CONFIG_ERROR,
    EXIT_RUNTIME_ERROR,
    EXIT_SUCCESS,
    _positive_int,
    config_values,
    main,
    parse_arguments,
)
from asac_tool.errors import ConfigError
from asac_tool.harness import TABLE_PRESETS


class TestParseArguments(unittest.TestCase):
    """
    Unit tests for the `parse_arguments` function.
    """

    def test_run_arguments_merge(self):
        """
        Test `parse_arguments` and `config_values` for the run command.

        :assert: Shorthand flags win over ``--set`` overrides.
        """
        args = parse_arguments(
            [
                "run",
                "--set",
                "cost.lambda=0.5",
                "--set",
                "mode=static",
                "--lambda",
                "0.2",
                "--repeats",
                "2",
            ]
        )
        self.assertEqual(args.command, "run")
        self.assertEqual(
            config_values(args),
            {"cost.lambda": "0.2", "mode": "static", "repeats": "2"},
        )

    def test_preset_is_the_base_layer(self):
        """
        Test the generate command with a preset and an override.

        :assert: Preset values are kept unless overridden.
        """
        args = parse_arguments(
            [
                "generate",
                "--preset",
                "table1",
                "--set",
                "synth.episodes=5",
                "--output",
                "data.csv",
            ]
        )
        values = config_values(args)
        self.assertEqual(values["synth.episodes"], "5")
        preset = TABLE_PRESETS["table1"]
        self.assertEqual(values["synth.phi"], preset["synth.phi"])

    @patch("os.path.isdir", return_value=True)
    def test_evaluate_requires_checkpoint_dir(self, mock_isdir):
        """
        Test the evaluate command.

        :param mock_isdir: Mock for `os.path.isdir` to
        simulate a valid directory.
        :assert: The directory is accepted; omitting it exits.
        """
        args = parse_arguments(["evaluate", "--checkpoint-dir", "models"])
        self.assertEqual(args.checkpoint_dir, "models")
        mock_isdir.assert_called_with("models")
        with self.assertRaises(SystemExit):
            parse_arguments(["evaluate"])

    @patch("os.path.isdir", return_value=False)
    def test_evaluate_missing_directory(self, mock_isdir):
        """
        Test the evaluate command with a directory that does not exist.

        :param mock_isdir: Mock for `os.path.isdir` to
        simulate a missing directory.
        :assert: Argument parsing exits.
        """
        with self.assertRaises(SystemExit):
            parse_arguments(["evaluate", "--checkpoint-dir", "absent"])
        mock_isdir.assert_called()

    def test_positive_int(self):
        """
        Test the positive integer validator.

        :assert: Zero is rejected and None raises ValueError.
        """
        self.assertEqual(_positive_int("3"), 3)
        with self.assertRaises(argparse.ArgumentTypeError):
            _positive_int("0")
        with self.assertRaises(ValueError):
            _positive_int(None)
        with self.assertRaises(SystemExit):
            parse_arguments(["run", "--workers", "0"])

    def test_reproduce_needs_seed(self):
        """
        Test the reproduce command without a seed.

        :assert: Argument parsing exits.
        """
        with self.assertRaises(SystemExit):
            parse_arguments(["reproduce", "table1"])


@patch("asac_tool.__main__.get_logger")
class TestMain(unittest.TestCase):
    """
    Unit tests for the `main` function and its exit codes.
    """

    @patch("asac_tool.__main__.run_experiment")
    def test_run_success(self, mock_run, mock_get_logger):
        """
        Test a successful run command.

        :param mock_run: Mock for `run_experiment`.
        :param mock_get_logger: Mock for `get_logger`.
        :assert: Exit code 0 and the config carries the flags.
        """
        self.assertEqual(main(["run", "--seed", "4"]), EXIT_SUCCESS)
        config = mock_run.call_args.args[0]
        self.assertEqual(config.seed, 4)
        self.assertIs(
            mock_run.call_args.kwargs["logger"], mock_get_logger.return_value
        )

    @patch("asac_tool.__main__.run_experiment")
    def test_configuration_error_exit_code(self, mock_run, mock_get_logger):
        """
        Test an unknown configuration key.

        :param mock_run: Mock for `run_experiment`.
        :param mock_get_logger: Mock for `get_logger`.
        :assert: Exit code 2, the error is logged and nothing runs.
        """
        self.assertEqual(
            main(["run", "--set", "no.such.key=1"]), EXIT_CONFIG_ERROR
        )
        mock_run.assert_not_called()
        mock_get_logger.return_value.exception.assert_called_once()

    @patch(
        "asac_tool.__main__.run_experiment",
        side_effect=RuntimeError("diverged"),
    )
    def test_runtime_error_exit_code(self, mock_run, mock_get_logger):
        """
        Test a run that fails while training.

        :param mock_run: Mock for `run_experiment` raising an error.
        :param mock_get_logger: Mock for `get_logger`.
        :assert: Exit code 3.
        """
        self.assertEqual(main(["run"]), EXIT_RUNTIME_ERROR)
        mock_run.assert_called_once()
        mock_get_logger.return_value.exception.assert_called_once()

    @patch(
        "asac_tool.__main__.evaluate_checkpoints",
        side_effect=ConfigError("no models"),
    )
    @patch("os.path.isdir", return_value=True)
    def test_evaluate_config_error(
        self, mock_isdir, mock_evaluate, mock_get_logger
    ):
        """
        Test an evaluation raising a configuration error.

        :param mock_isdir: Mock for `os.path.isdir`.
        :param mock_evaluate: Mock for `evaluate_checkpoints`.
        :param mock_get_logger: Mock for `get_logger`.
        :assert: Exit code 2.
        """
        code = main(["evaluate", "--checkpoint-dir", "models"])
        self.assertEqual(code, EXIT_CONFIG_ERROR)
        self.assertEqual(mock_evaluate.call_args.args[1], "models")
        mock_isdir.assert_called()
        mock_get_logger.assert_called_once()

    @patch("asac_tool.__main__.reproduce_table")
    def test_reproduce_arguments(self, mock_reproduce, mock_get_logger):
        """
        Test the reproduce command.

        :param mock_reproduce: Mock for `reproduce_table`.
        :param mock_get_logger: Mock for `get_logger`.
        :assert: Table, seed, directory and overrides are passed on.
        """
        code = main(
            [
                "reproduce",
                "table2",
                "--seed",
                "7",
                "--iterations",
                "10",
                "--output-dir",
                "tables",
            ]
        )
        self.assertEqual(code, EXIT_SUCCESS)
        mock_reproduce.assert_called_once_with(
            "table2",
            7,
            output_dir="tables",
            overrides={"training.iterations": "10"},
            logger=mock_get_logger.return_value,
        )

    @patch("asac_tool.__main__.export_csv")
    @patch("asac_tool.__main__.generate_dataset")
    def test_generate_preset(
        self, mock_generate, mock_export, mock_get_logger
    ):
        """
        Test the generate command with a preset.

        :param mock_generate: Mock for `generate_dataset`.
        :param mock_export: Mock for `export_csv`.
        :param mock_get_logger: Mock for `get_logger`.
        :assert: The preset dataset is generated and exported.
        """
        code = main(["generate", "--preset", "table3", "--output", "d.csv"])
        self.assertEqual(code, EXIT_SUCCESS)
        spec = mock_generate.call_args.args[0]
        self.assertEqual(spec.label, "binary-ydep")
        self.assertEqual(spec.total_features, 20)
        self.assertEqual(mock_export.call_args.args[1], "d.csv")

    @patch("builtins.print")
    @patch("asac_tool.__main__.summarize_report", return_value="summary")
    @patch("os.path.isfile", side_effect=lambda path: path == "a.json")
    def test_report(
        self, mock_isfile, mock_summarize, mock_print, mock_get_logger
    ):
        """
        Test the report command.

        :param mock_isfile: Mock for `os.path.isfile`.
        :param mock_summarize: Mock for `summarize_report`.
        :param mock_print: Mock for `print`.
        :param mock_get_logger: Mock for `get_logger`.
        :assert: Existing reports are summarized; a missing one gives
        exit code 3.
        """
        self.assertEqual(main(["report", "a.json"]), EXIT_SUCCESS)
        mock_print.assert_called_once_with("summary")
        self.assertEqual(main(["report", "b.json"]), EXIT_RUNTIME_ERROR)
        mock_summarize.assert_called_once_with("a.json")
        mock_isfile.assert_called()
        self.assertIsInstance(mock_get_logger.return_value, MagicMock)


if __name__ == "__main__":
    unittest.main()
