"""
Tests: Table Reproduction

Full-size training runs; enabled with ``ASAC_TOOL_SLOW_TESTS=1``.
"""

import filecmp
import json
import os
import tempfile
import unittest
from unittest.mock import MagicMock

import numpy as np
from scipy.stats import spearmanr

from asac_tool.harness import (
    TABLE1_COSTS,
    TABLE1_PHI,
    reproduce_table,
)

SLOW_TESTS = os.environ.get("ASAC_TOOL_SLOW_TESTS") == "1"


def _rates(report: dict, condition: str = "all") -> np.ndarray:
    return np.asarray(report["rates"]["test"][condition])


def _seed_report(directory: str, cell: str, seed: int) -> dict:
    path = os.path.join(directory, cell, f"seed_{seed}", "report.json")
    with open(path, "r", encoding="utf-8") as file:
        return json.load(file)


def _at_most_one_small_inversion(values, tolerance: float) -> bool:
    rises = np.diff(values)
    inversions = rises[rises > 0]
    return len(inversions) <= 1 and bool(np.all(inversions <= tolerance))


@unittest.skipUnless(SLOW_TESTS, "set ASAC_TOOL_SLOW_TESTS=1 to run")
class TestTable1(unittest.TestCase):
    """
    Feature rates against autoregressive coefficients under uniform cost.
    """

    SEEDS = (0, 1, 2)

    @classmethod
    def setUpClass(cls):
        cls._directory = tempfile.TemporaryDirectory()
        cls.directory = cls._directory.name
        cls.document = reproduce_table(
            "table1",
            cls.SEEDS[0],
            output_dir=cls.directory,
            overrides={"repeats": str(len(cls.SEEDS))},
            logger=MagicMock(),
        )
        cls.cells = cls.document["cells"]

    @classmethod
    def tearDownClass(cls):
        cls._directory.cleanup()

    def test_slow_feature_is_rarely_measured(self):
        """
        Test the rates at the highest cost.

        :assert: The most persistent feature is measured below 0.15 and
        the memoryless one at least twice as often.
        """
        rates = _rates(self.cells[f"cost_{max(TABLE1_COSTS)}"])
        self.assertLess(rates[-1], 0.15)
        self.assertGreaterEqual(rates[0], 2.0 * rates[-1])

    def test_rates_fall_with_persistence(self):
        """
        Test the rank correlation between coefficient and rate.

        :assert: At most -0.7 for every cost of at least 3.
        """
        for cost in (c for c in TABLE1_COSTS if c >= 3):
            with self.subTest(cost=cost):
                rho = spearmanr(
                    TABLE1_PHI, _rates(self.cells[f"cost_{cost}"])
                ).statistic
                self.assertLessEqual(rho, -0.7)

    def test_rmse_at_unit_cost(self):
        """
        Test the prediction error at cost 1.

        :assert: RMSE lies in [0.08, 0.16].
        """
        error = self.cells["cost_1"]["metrics"]["rmse"]
        self.assertGreaterEqual(error, 0.08)
        self.assertLessEqual(error, 0.16)

    def test_cost_monotonicity_per_seed(self):
        """
        Test the cost grid 1, 3, 5 for each seed.

        :assert: The mean rate does not rise (one rise up to 0.02 is
        tolerated) and RMSE does not fall by more than 0.01.
        """
        for seed in self.SEEDS:
            reports = [
                _seed_report(self.directory, f"cost_{cost}", seed)
                for cost in (1, 3, 5)
            ]
            rates = [r["costs"]["mean_measurement_rate"] for r in reports]
            errors = [r["metrics"]["rmse"] for r in reports]
            with self.subTest(seed=seed):
                self.assertTrue(_at_most_one_small_inversion(rates, 0.02))
                self.assertTrue(np.all(np.diff(errors) >= -0.01))


@unittest.skipUnless(SLOW_TESTS, "set ASAC_TOOL_SLOW_TESTS=1 to run")
class TestTable2(unittest.TestCase):
    """
    True features against cheaper noisy copies.
    """

    @classmethod
    def setUpClass(cls):
        cls._directory = tempfile.TemporaryDirectory()
        cls.cells = reproduce_table(
            "table2",
            0,
            output_dir=cls._directory.name,
            overrides={"repeats": "2"},
            logger=MagicMock(),
        )["cells"]

    @classmethod
    def tearDownClass(cls):
        cls._directory.cleanup()

    def test_accurate_cheap_copies_replace_true_features(self):
        """
        Test the least noisy, cheapest copies.

        :assert: Copies of the first four features are measured at 0.9
        or more and the true features at 0.1 or less.
        """
        rates = _rates(self.cells["gamma_0.2_cost_0.1"])
        n_true = len(rates) // 2
        self.assertTrue(np.all(rates[n_true : n_true + 4] >= 0.9))
        self.assertTrue(np.all(rates[:4] <= 0.1))

    def test_noisy_expensive_copies_lose(self):
        """
        Test the noisiest, most expensive copies.

        :assert: The third and fourth true features are measured at 0.9
        or more.
        """
        rates = _rates(self.cells["gamma_0.6_cost_0.5"])
        self.assertTrue(np.all(rates[2:4] >= 0.9))


@unittest.skipUnless(SLOW_TESTS, "set ASAC_TOOL_SLOW_TESTS=1 to run")
class TestTable3(unittest.TestCase):
    """
    Label-conditional rates as the true-feature cost scale grows.
    """

    @classmethod
    def setUpClass(cls):
        cls._directory = tempfile.TemporaryDirectory()
        cls.cells = reproduce_table(
            "table3",
            0,
            output_dir=cls._directory.name,
            overrides={"repeats": "2"},
            logger=MagicMock(),
        )["cells"]

    @classmethod
    def tearDownClass(cls):
        cls._directory.cleanup()

    def _true_rate(self, eta: float, label: str) -> float:
        rates = _rates(self.cells[f"eta_{eta}"], label)
        return float(rates[: len(rates) // 2].mean())

    def test_positive_label_draws_measurements(self):
        """
        Test the conditional true-feature rates at the lowest scale.

        :assert: The rate given y=1 is at least three times the rate
        given y=0.
        """
        self.assertGreaterEqual(
            self._true_rate(0.1, "y=1"), 3.0 * self._true_rate(0.1, "y=0")
        )

    def test_rate_falls_with_scale(self):
        """
        Test the y=1 true-feature rate across scales.

        :assert: It is lower at 0.5 than at 0.1.
        """
        self.assertLess(
            self._true_rate(0.5, "y=1"), self._true_rate(0.1, "y=1")
        )


@unittest.skipUnless(SLOW_TESTS, "set ASAC_TOOL_SLOW_TESTS=1 to run")
class TestReproducibility(unittest.TestCase):
    """
    Repeated table runs with the same seed.
    """

    def test_table1_rates_are_identical(self):
        """
        Test two runs of table1 with seed 7.

        :assert: Both ``rates.csv`` files are byte-identical.
        """
        with tempfile.TemporaryDirectory() as directory:
            first = os.path.join(directory, "first")
            second = os.path.join(directory, "second")
            for output_dir in (first, second):
                reproduce_table(
                    "table1", 7, output_dir=output_dir, logger=MagicMock()
                )
            self.assertTrue(
                filecmp.cmp(
                    os.path.join(first, "rates.csv"),
                    os.path.join(second, "rates.csv"),
                    shallow=False,
                )
            )


if __name__ == "__main__":
    unittest.main()
