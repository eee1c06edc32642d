"""
Tests: Run Experiment
"""

import json
import os
import tempfile
import unittest
from concurrent.futures import ThreadPoolExecutor
from unittest.mock import MagicMock, patch

import numpy as np

from asac_tool import OUTPUT_DIR_ENV_VAR
from asac_tool.errors import ConfigError
from asac_tool.harness import (
    TABLE1_PHI,
    TABLE_PRESETS,
    aggregate_reports,
    build_experiment_config,
    evaluate_checkpoints,
    rate_conditions,
    rates_table,
    reproduce_table,
    run_experiment,
    split_episodes,
    summarize_report,
    table_cells,
    train_models,
)
from asac_tool.helpers.helpers_logging import get_logger
from asac_tool.sensing import step_cost
from asac_tool.types import Mode, Task
from asac_tool_tests.fixtures import random_episodes

TINY_RUN = {
    "synth.features": "2",
    "synth.steps": "3",
    "synth.episodes": "12",
    "training.iterations": "2",
    "training.batch_size": "4",
    "training.log_every": "1",
    "model.hidden_size": "3",
    "cost.lambda": "0.1",
}


def _read(path: str) -> bytes:
    with open(path, "rb") as file:
        return file.read()


class TestBuildExperimentConfig(unittest.TestCase):
    """
    Unit tests for the `build_experiment_config` function.
    """

    def test_defaults(self):
        """
        Test a config built from no values.

        :assert: A synthetic regression experiment scored by RMSE.
        """
        config = build_experiment_config({"output.dir": "out"})
        self.assertEqual(config.task, Task.REGRESSION)
        self.assertEqual(config.mode, Mode.TIME_SERIES)
        self.assertEqual(config.metrics, ("rmse",))
        self.assertEqual(config.synthetic.n_features, 10)
        self.assertEqual(config.values["output.dir"], "out")

    def test_binary_label_selects_classification(self):
        """
        Test the label-dependent synthetic dataset.

        :assert: The task is classification with both ranking metrics
        and per-class rate conditions.
        """
        config = build_experiment_config({"synth.label": "binary-ydep"})
        self.assertEqual(config.task, Task.CLASSIFICATION)
        self.assertEqual(config.metrics, ("auroc", "auprc"))
        self.assertEqual(list(rate_conditions(config)), ["all", "y=0", "y=1"])

    def test_aliases(self):
        """
        Test the alias keys.

        :assert: They land on the canonical keys.
        """
        config = build_experiment_config(
            {"training.lambda": "0.5", "training.mode": "static"}
        )
        self.assertEqual(config.lam, 0.5)
        self.assertEqual(config.training.mode, Mode.STATIC)

    @patch.dict(os.environ, {OUTPUT_DIR_ENV_VAR: "from-env"})
    def test_output_dir_from_environment(self):
        """
        Test the output directory fallback.

        :assert: The environment variable is used when no directory is
        configured.
        """
        self.assertEqual(build_experiment_config({}).output_dir, "from-env")

    def test_invalid_values_raise(self):
        """
        Test rejected configurations.

        :assert: Each raises ConfigError.
        """
        cases = [
            {"no.such.key": "1"},
            {"seed": "abc"},
            {"metrics": "auroc"},
            {"mode": "static", "cost.delays": "1"},
            {"data.source": "csv"},
            {"evaluation.test_fraction": "1.0"},
            {"cost.lambda": "-1"},
            {"cost.eta": "2"},
            {"synth.features": "3", "cost.values": "1,2"},
            {"output.formats": "xml"},
            {"repeats": "0"},
            {"synth.phi": "0.1,0.2"},
        ]
        for values in cases:
            with self.subTest(values=values):
                with self.assertRaises(ConfigError):
                    build_experiment_config(values)

    def test_cost_model_expansion(self):
        """
        Test costs for true features and their noisy copies.

        :assert: The scalar cost covers true features and the noisy
        cost covers the copies.
        """
        config = build_experiment_config(
            {
                "synth.features": "3",
                "synth.gamma": "0.2",
                "cost.values": "2",
                "cost.noisy": "0.5",
                "cost.delays": "0,0,1,0,0,0",
            }
        )
        model = config.cost_model(6)
        np.testing.assert_array_equal(
            model.costs, [2.0, 2.0, 2.0, 0.5, 0.5, 0.5]
        )
        np.testing.assert_array_equal(model.delays, [0, 0, 1, 0, 0, 0])

    def _preset_cells(self, table):
        for name, cell in table_cells(table):
            config = build_experiment_config({**TABLE_PRESETS[table], **cell})
            model = config.cost_model(config.synthetic.total_features)
            yield name, cell, model

    def test_preset_effective_costs(self):
        """
        Test the per-step price of one measurement in every preset cell.

        :assert: lambda * c is 0.0005 * c for table1, 0.01 (true) and
        0.01 * noisy cost for table2, 0.001 (true) and 0.0002 (noisy)
        for table3, where eta scales the whole step on y = 1.
        """
        for name, cell, model in self._preset_cells("table1"):
            with self.subTest(cell=name):
                price = 0.0005 * float(cell["cost.values"])
                np.testing.assert_allclose(
                    model.lam * model.costs, np.full(10, price), rtol=1e-12
                )
        for name, cell, model in self._preset_cells("table2"):
            with self.subTest(cell=name):
                noisy = 0.01 * float(cell["cost.noisy"])
                np.testing.assert_allclose(
                    model.lam * model.costs,
                    np.repeat([0.01, noisy], 10),
                    rtol=1e-12,
                )
        for name, cell, model in self._preset_cells("table3"):
            with self.subTest(cell=name):
                np.testing.assert_allclose(
                    model.lam * model.costs,
                    np.repeat([0.001, 0.0002], 10),
                    rtol=1e-12,
                )
                self.assertAlmostEqual(
                    step_cost(np.ones(20), model, 1.0),
                    float(cell["cost.eta"]) * 0.001 * 12.0,
                )


class TestSplitEpisodes(unittest.TestCase):
    """
    Unit tests for the `split_episodes` function.
    """

    def test_split_is_disjoint_and_exhaustive(self):
        """
        Test a seeded split.

        :assert: The halves partition the ids and the split repeats for
        the same seed.
        """
        episodes = random_episodes(10, 2, 1)
        train, test = split_episodes(episodes, 0.3, seed=4)
        train_ids = {e.episode_id for e in train}
        test_ids = {e.episode_id for e in test}
        self.assertEqual(len(test_ids), 3)
        self.assertFalse(train_ids & test_ids)
        self.assertEqual(len(train_ids | test_ids), 10)
        again = split_episodes(episodes, 0.3, seed=4)[1]
        self.assertEqual(
            [e.episode_id for e in again], sorted(test_ids, key=int)
        )

    def test_small_split_keeps_both_sides(self):
        """
        Test two episodes with a tiny test fraction.

        :assert: One episode lands on each side; one episode raises.
        """
        train, test = split_episodes(random_episodes(2, 2, 1), 0.01, 0)
        self.assertEqual((len(train), len(test)), (1, 1))
        with self.assertRaises(ValueError):
            split_episodes(random_episodes(1, 2, 1), 0.5, 0)


class TestRunExperiment(unittest.TestCase):
    """
    End-to-end runs on tiny synthetic datasets.
    """

    def setUp(self):
        self.logger = MagicMock()
        self._directory = tempfile.TemporaryDirectory()
        self.directory = self._directory.name

    def tearDown(self):
        self._directory.cleanup()

    def _config(self, name, **extra):
        return build_experiment_config(
            {
                **TINY_RUN,
                **extra,
                "output.dir": os.path.join(self.directory, name),
            }
        )

    def test_run_writes_outputs(self):
        """
        Test a single run.

        :assert: Report, rate table, history and both models are
        written and the report holds RMSE and costs.
        """
        report = run_experiment(self._config("run"), logger=self.logger)
        written = sorted(os.listdir(os.path.join(self.directory, "run")))
        self.assertEqual(
            written,
            [
                "history.csv",
                "predictor.json",
                "rates.csv",
                "report.json",
                "selector.json",
            ],
        )
        self.assertIn("rmse", report["metrics"])
        self.assertEqual(len(report["rates"]["test"]["all"]), 2)
        self.assertGreaterEqual(report["costs"]["mean_episode_cost"], 0.0)
        self.assertEqual(report["config"]["training.iterations"], "2")

    def test_runs_are_reproducible(self):
        """
        Test two runs with the same seed.

        :assert: The rate tables are byte-identical.
        """
        for name in ("first", "second"):
            run_experiment(self._config(name, seed="3"), logger=self.logger)
        self.assertEqual(
            _read(os.path.join(self.directory, "first", "rates.csv")),
            _read(os.path.join(self.directory, "second", "rates.csv")),
        )

    def test_repeats_are_aggregated(self):
        """
        Test two repeats run in sequence.

        :assert: Per-seed directories exist and the summary lists both
        seeds with spreads.
        """
        config = self._config(
            "repeats", repeats="2", seed="5", **{"evaluation.rates_on": "both"}
        )
        report = run_experiment(config, logger=self.logger)
        root = os.path.join(self.directory, "repeats")
        self.assertTrue(os.path.isdir(os.path.join(root, "seed_5")))
        self.assertTrue(os.path.isdir(os.path.join(root, "seed_6")))
        self.assertEqual(report["seeds"], [5, 6])
        self.assertEqual(sorted(report["rates"]), ["test", "train"])
        self.assertIn("rmse", report["metrics_std"])

    @patch("asac_tool.harness.ProcessPoolExecutor", ThreadPoolExecutor)
    @patch("asac_tool.harness.get_logger")
    def test_parallel_repeats_rebuild_logger(self, mock_get_logger):
        """
        Test two repeats on two workers.

        :param mock_get_logger: Mock for the logger each worker rebuilds.
        :assert: Every worker asks for a logger with the file and quiet
        flag of the caller, and both seeds are aggregated.
        """
        with tempfile.TemporaryDirectory() as directory:
            log_path = os.path.join(directory, "caller.log")
            caller = get_logger(
                filepath=log_path,
                force_create=True,
                quiet=True,
            )
            config = self._config("parallel", repeats="2", workers="2")
            report = run_experiment(config, logger=caller)
            for handler in list(caller.handlers):
                handler.close()
            get_logger(force_create=True, quiet=False)
        self.assertEqual(report["seeds"], [0, 1])
        worker_calls = [
            call.kwargs
            for call in mock_get_logger.call_args_list
            if "filepath" in call.kwargs
        ]
        expected = {"filepath": os.path.abspath(log_path), "quiet": True}
        self.assertEqual(worker_calls, [expected, expected])

    def test_rerun_warns_about_existing_outputs(self):
        """
        Test running the same experiment twice into one directory.

        :assert: The second run warns that files will be overwritten.
        """
        config = self._config("rerun")
        run_experiment(config, logger=self.logger)
        run_experiment(config, logger=self.logger)
        self.logger.warning.assert_any_call(
            "Output directory %s is not empty; files will be overwritten",
            os.path.abspath(config.output_dir),
        )

    def test_train_then_evaluate_checkpoints(self):
        """
        Test training and a separate evaluation of the saved models.

        :assert: The evaluation matches an end-to-end run.
        """
        train_models(self._config("train"), logger=self.logger)
        evaluated = evaluate_checkpoints(
            self._config("evaluate"),
            os.path.join(self.directory, "train"),
            logger=self.logger,
        )
        combined = run_experiment(self._config("run"), logger=self.logger)
        self.assertEqual(evaluated["rates"], combined["rates"])
        self.assertEqual(evaluated["metrics"], combined["metrics"])

    def test_static_mode_run(self):
        """
        Test a run in the static setting.

        :assert: Rates are valid fractions.
        """
        report = run_experiment(
            self._config("static", mode="static"), logger=self.logger
        )
        rates = np.asarray(report["rates"]["test"]["all"])
        self.assertTrue(np.all((rates >= 0) & (rates <= 1)))

    def test_failure_logs_configuration(self):
        """
        Test a run whose data file is missing.

        :assert: The error propagates and the configuration is logged.
        """
        config = self._config(
            "csv",
            **{
                "data.source": "csv",
                "data.path": os.path.join(self.directory, "absent.csv"),
            },
        )
        with self.assertRaises(ConfigError):
            run_experiment(config, logger=self.logger)
        self.logger.error.assert_called_once()


class TestReports(unittest.TestCase):
    """
    Unit tests for report aggregation, tables and summaries.
    """

    @staticmethod
    def _report(seed, rates, rmse):
        return {
            "rates": {"test": rates},
            "metrics": {"rmse": rmse},
            "costs": {"mean_measurement_rate": 0.5},
            "config": {},
            "seed": seed,
            "wall_clock_seconds": 1.0,
        }

    def test_aggregate_reports(self):
        """
        Test mean and spread across two repeats.

        :assert: Means, sample standard deviations and partial
        conditions are handled.
        """
        config = build_experiment_config({"output.dir": "out"})
        reports = [
            self._report(0, {"all": [0.2, 0.4], "y=1": [1.0, 0.0]}, 0.1),
            self._report(1, {"all": [0.4, 0.4]}, 0.3),
        ]
        summary = aggregate_reports(reports, config)
        np.testing.assert_allclose(summary["rates"]["test"]["all"], [0.3, 0.4])
        np.testing.assert_allclose(
            summary["rates_std"]["test"]["all"], [np.sqrt(0.02), 0.0]
        )
        self.assertEqual(summary["rates"]["test"]["y=1"], [1.0, 0.0])
        self.assertAlmostEqual(summary["metrics"]["rmse"], 0.2)
        self.assertEqual(summary["seeds"], [0, 1])
        self.assertEqual(summary["wall_clock_seconds"], 2.0)

    def test_rates_table(self):
        """
        Test the feature by condition grid.

        :assert: One column per (split, condition) and one row per
        feature.
        """
        header, rows = rates_table(
            self._report(0, {"all": [0.1, 0.2], "y=0": [0.3, 0.4]}, 0.0)
        )
        self.assertEqual(header, ["feature", "test:all", "test:y=0"])
        self.assertEqual(rows, [["x1", 0.1, 0.3], ["x2", 0.2, 0.4]])

    def test_summarize_report(self):
        """
        Test the one-line summary of a report file.

        :assert: It names the seed and the metric.
        """
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "report.json")
            with open(path, "w", encoding="utf-8") as file:
                json.dump(self._report(4, {"all": [0.5]}, 0.25), file)
            summary = summarize_report(path)
        self.assertIn("seed 4", summary)
        self.assertIn("rmse=0.2500", summary)


def _fake_cell_report(config, logger=None):
    n_features = config.synthetic.total_features
    rate = config.costs[0] / 10.0 + config.eta / 100.0
    if config.noisy_cost is not None:
        rate += config.noisy_cost
    rates = {"all": [rate] * n_features}
    if config.task is Task.CLASSIFICATION:
        rates["y=1"] = [2 * rate] * n_features
        rates["y=0"] = [rate] * n_features
    return {
        "rates": {"test": rates},
        "metrics": {"rmse": config.costs[0]},
        "seed": config.seed,
    }


@patch("asac_tool.harness.run_experiment", side_effect=_fake_cell_report)
class TestReproduceTable(unittest.TestCase):
    """
    Unit tests for the `reproduce_table` layouts with stubbed cells.
    """

    def setUp(self):
        self.logger = MagicMock()
        self._directory = tempfile.TemporaryDirectory()
        self.directory = self._directory.name

    def tearDown(self):
        self._directory.cleanup()

    def test_table1_layout(self, mock_run):
        """
        Test the autoregression table.

        :param mock_run: Stub for the per-cell experiment.
        :assert: One row per feature plus RMSE, one column per cost,
        and both files are written.
        """
        document = reproduce_table(
            "table1", 7, output_dir=self.directory, logger=self.logger
        )
        self.assertEqual(mock_run.call_count, 5)
        self.assertEqual(
            document["header"],
            ["feature", "phi", *(f"cost={c}" for c in range(1, 6))],
        )
        self.assertEqual(len(document["rows"]), 11)
        self.assertEqual(document["rows"][9][:2], ["x10", TABLE1_PHI[9]])
        self.assertAlmostEqual(document["rows"][0][6], 0.51)
        self.assertEqual(document["rows"][-1][2:], [1.0, 2.0, 3.0, 4.0, 5.0])
        for name in ("rates.csv", "report.json"):
            self.assertTrue(os.path.isfile(os.path.join(self.directory, name)))
        seeds = {call.args[0].seed for call in mock_run.call_args_list}
        self.assertEqual(seeds, {7})

    def test_table1_follows_overridden_features(self, mock_run):
        """
        Test the autoregression table with fewer features.

        :param mock_run: Stub for the per-cell experiment.
        :assert: Rows and phi values come from the configured features.
        """
        document = reproduce_table(
            "table1",
            0,
            output_dir=self.directory,
            overrides={"synth.features": "3", "synth.phi": "0.1,0.5,0.9"},
            logger=self.logger,
        )
        rows = document["rows"]
        self.assertEqual(len(rows), 4)
        self.assertEqual(rows[2][:2], ["x3", 0.9])
        self.assertEqual(rows[-1][0], "rmse")
        config = mock_run.call_args_list[0].args[0]
        self.assertEqual(config.synthetic.total_features, 3)

    def test_rerun_warns_about_existing_outputs(self, mock_run):
        """
        Test reproducing a table into a populated directory.

        :param mock_run: Stub for the per-cell experiment.
        :assert: The first run does not warn and the second one does.
        """
        reproduce_table(
            "table3", 0, output_dir=self.directory, logger=self.logger
        )
        self.logger.warning.assert_not_called()
        reproduce_table(
            "table3", 0, output_dir=self.directory, logger=self.logger
        )
        self.logger.warning.assert_called_once()

    def test_table2_layout(self, mock_run):
        """
        Test the noisy-copy table.

        :param mock_run: Stub for the per-cell experiment.
        :assert: Nine cells, four features per gamma, true and noisy
        columns per noisy cost.
        """
        document = reproduce_table(
            "table2", 1, output_dir=self.directory, logger=self.logger
        )
        self.assertEqual(mock_run.call_count, 9)
        self.assertEqual(len(document["header"]), 8)
        self.assertEqual(len(document["rows"]), 12)
        self.assertEqual(document["rows"][0][:2], [0.2, "x1"])
        config = mock_run.call_args_list[0].args[0]
        self.assertEqual(config.synthetic.total_features, 20)

    def test_table3_layout(self, mock_run):
        """
        Test the label-dependent cost table.

        :param mock_run: Stub for the per-cell experiment.
        :assert: Rows for each label and columns per eta.
        """
        document = reproduce_table(
            "table3",
            2,
            output_dir=self.directory,
            overrides={"training.iterations": "3"},
            logger=self.logger,
        )
        self.assertEqual(mock_run.call_count, 3)
        self.assertEqual([row[0] for row in document["rows"]], ["y=1", "y=0"])
        self.assertEqual(len(document["header"]), 7)
        config = mock_run.call_args_list[0].args[0]
        self.assertEqual(config.training.iterations, 3)
        self.assertEqual(config.task, Task.CLASSIFICATION)

    def test_unknown_table(self, mock_run):
        """
        Test an unknown table name.

        :param mock_run: Stub for the per-cell experiment.
        :assert: ConfigError is raised and nothing runs.
        """
        with self.assertRaises(ConfigError):
            reproduce_table("table9", 0, output_dir=self.directory)
        with self.assertRaises(ConfigError):
            table_cells("table9")
        mock_run.assert_not_called()


if __name__ == "__main__":
    unittest.main()
