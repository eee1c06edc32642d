"""
Tests: Metrics
"""

import unittest

import numpy as np

from asac_tool.errors import MetricError
from asac_tool.harness import (
    auprc,
    auroc,
    compute_metrics,
    cost_totals,
    label_equals,
    measurement_rates,
    rmse,
)
from asac_tool.types import CostModel
from asac_tool_tests.fixtures import make_trajectory


class TestMeasurementRates(unittest.TestCase):
    """
    Unit tests for the `measurement_rates` function.
    """

    def setUp(self):
        decisions = np.array(
            [
                [[1, 0], [1, 1]],
                [[0, 0], [1, 0]],
            ]
        )
        self.trajectory = make_trajectory(decisions, [[0, 1], [1, 1]])

    def test_pooled_rates(self):
        """
        Test rates pooled over every (episode, step) cell.

        :assert: Each entry is the share of cells that measured it.
        """
        np.testing.assert_allclose(
            measurement_rates([self.trajectory]), [0.75, 0.25]
        )

    def test_conditional_rates(self):
        """
        Test rates restricted by a label condition.

        :assert: Only steps with the label are pooled; an empty
        selection raises MetricError.
        """
        np.testing.assert_allclose(
            measurement_rates([self.trajectory], label_equals(1.0)),
            [2 / 3, 1 / 3],
        )
        with self.assertRaises(MetricError):
            measurement_rates([self.trajectory], label_equals(5.0))

    def test_cost_totals(self):
        """
        Test the per-episode cost summary.

        :assert: Raw costs ignore lambda and the rate pools all bits.
        """
        totals = cost_totals(
            [self.trajectory], CostModel([2.0, 3.0], lam=0.5)
        )
        self.assertAlmostEqual(totals["mean_episode_cost"], (7.0 + 2.0) / 2)
        self.assertAlmostEqual(totals["mean_measurement_rate"], 0.5)


class TestScores(unittest.TestCase):
    """
    Unit tests for RMSE, AUROC and AUPRC.
    """

    def test_rmse(self):
        """
        Test RMSE on a small vector.

        :assert: The closed form; mismatched inputs raise MetricError.
        """
        self.assertAlmostEqual(rmse([1.0, 2.0], [1.0, 4.0]), np.sqrt(2.0))
        with self.assertRaises(MetricError):
            rmse([1.0], [1.0, 2.0])

    def test_worked_example(self):
        """
        Test both ranking scores on four labelled scores.

        :assert: AUROC is 0.75 and average precision is 5/6.
        """
        labels, scores = [1, 0, 1, 0], [0.9, 0.8, 0.7, 0.1]
        self.assertAlmostEqual(auroc(labels, scores), 0.75)
        self.assertAlmostEqual(auprc(labels, scores), 5.0 / 6.0)

    def test_ties_count_half(self):
        """
        Test constant scores.

        :assert: AUROC is one half and AP equals the positive share.
        """
        labels, scores = [1, 0, 0, 1, 0], [0.3] * 5
        self.assertAlmostEqual(auroc(labels, scores), 0.5)
        self.assertAlmostEqual(auprc(labels, scores), 0.4)

    def test_random_scores(self):
        """
        Test AUROC of uninformative scores on balanced labels.

        :assert: It is within 0.02 of one half over 10^4 points.
        """
        rng = np.random.default_rng(17)
        labels = np.repeat([0, 1], 5000)
        self.assertAlmostEqual(
            auroc(labels, rng.random(labels.size)), 0.5, delta=0.02
        )

    def test_single_class_raises(self):
        """
        Test ranking scores with one class present.

        :assert: MetricError is raised.
        """
        with self.assertRaises(MetricError):
            auroc([1, 1], [0.2, 0.4])
        with self.assertRaises(MetricError):
            auprc([0, 0], [0.2, 0.4])


class TestComputeMetrics(unittest.TestCase):
    """
    Unit tests for the `compute_metrics` function.
    """

    def test_classification_uses_positive_column(self):
        """
        Test binary classification metrics from class probabilities.

        :assert: They equal the scores of the positive-class column.
        """
        labels = np.array([[1, 0], [1, 0]])
        positive = np.array([[0.9, 0.8], [0.7, 0.1]])
        predictions = np.stack([1.0 - positive, positive], axis=-1)
        trajectory = make_trajectory(
            np.zeros((2, 2, 1)), labels, predictions
        )
        result = compute_metrics([trajectory], "classification")
        self.assertEqual(sorted(result), ["auprc", "auroc"])
        self.assertAlmostEqual(result["auroc"], 0.75)
        self.assertAlmostEqual(result["auprc"], 5.0 / 6.0)

    def test_regression_default(self):
        """
        Test the default regression metric.

        :assert: Only RMSE is reported; a classification metric raises.
        """
        trajectory = make_trajectory(
            np.zeros((1, 2, 1)), [[1.0, 3.0]], [[[1.0], [1.0]]]
        )
        self.assertEqual(
            compute_metrics([trajectory], "regression"),
            {"rmse": np.sqrt(2.0)},
        )
        with self.assertRaises(MetricError):
            compute_metrics([trajectory], "regression", ["auroc"])

    def test_multiclass_one_vs_rest(self):
        """
        Test three-class AUROC with a perfect ranking.

        :assert: The macro average is 1.
        """
        labels = np.array([[0, 1, 2]])
        predictions = np.eye(3)[None] * 0.8 + 0.2 / 3
        trajectory = make_trajectory(
            np.zeros((1, 3, 1)), labels, predictions
        )
        result = compute_metrics([trajectory], "classification", ["auroc"])
        self.assertAlmostEqual(result["auroc"], 1.0)


if __name__ == "__main__":
    unittest.main()
