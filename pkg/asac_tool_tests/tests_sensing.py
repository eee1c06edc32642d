"""
Tests: Sensing
"""

import unittest

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from asac_tool import SENTINEL
from asac_tool.autodiff import Tape
from asac_tool.errors import ShapeError
from asac_tool.sensing import (
    apply_delayed_mask,
    apply_mask,
    decision_log_prob,
    empty_observation,
    enforce_static_nesting,
    sample_decision,
    step_cost,
    update_static_observation,
)
from asac_tool.types import CostModel
from asac_tool_tests.fixtures import log_prob_values

_finite = st.floats(-1e6, 1e6, allow_nan=False)


@st.composite
def _history(draw, max_steps=6, max_features=5):
    steps = draw(st.integers(1, max_steps))
    features = draw(st.integers(1, max_features))
    values = draw(arrays(np.float64, (steps, features), elements=_finite))
    bits = st.sampled_from([0.0, 1.0])
    decisions = draw(arrays(np.float64, (steps, features), elements=bits))
    return values, decisions


class TestApplyMask(unittest.TestCase):
    """
    Unit tests for `apply_mask`.
    """

    def test_sentinel_outside_mask(self):
        """
        Test a partially selected vector.

        :assert: Selected entries are copied; the rest hold the sentinel.
        """
        observed = apply_mask([1.5, -2.0, 3.0], [1, 0, 1])
        np.testing.assert_array_equal(
            observed.values, [1.5, SENTINEL, 3.0]
        )
        np.testing.assert_array_equal(observed.mask, [1.0, 0.0, 1.0])
        self.assertFalse(np.any(observed.missing))

    def test_shape_mismatch_raises(self):
        """
        Test a decision vector of the wrong length.

        :assert: ShapeError is raised.
        """
        with self.assertRaises(ShapeError):
            apply_mask([1.0, 2.0], [1.0])

    @settings(max_examples=1000, deadline=None)
    @given(_history())
    def test_zero_delay_equals_apply_mask(self, drawn):
        """
        Test the delayed mask with all delays zero.

        :param drawn: Random history and decisions.
        :assert: Every step matches `apply_mask` on that step.
        """
        values, decisions = drawn
        delays = np.zeros(values.shape[1], dtype=int)
        for t in range(values.shape[0]):
            delayed = apply_delayed_mask(values, decisions, delays, t=t)
            direct = apply_mask(values[t], decisions[t])
            np.testing.assert_array_equal(delayed.values, direct.values)
            np.testing.assert_array_equal(delayed.mask, direct.mask)


class TestApplyDelayedMask(unittest.TestCase):
    """
    Unit tests for `apply_delayed_mask`.
    """

    def test_values_arrive_after_delay(self):
        """
        Test a feature with a two-step delay.

        :assert: The value selected at step 0 appears at step 2 only;
        the undelayed feature is read at once.
        """
        history = np.array([[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]])
        decisions = np.array([[1.0, 1.0], [0.0, 0.0], [0.0, 1.0]])
        delays = [2, 0]
        first = apply_delayed_mask(history, decisions, delays, t=0)
        np.testing.assert_array_equal(first.mask, [0.0, 1.0])
        np.testing.assert_array_equal(first.values, [SENTINEL, 10.0])
        last = apply_delayed_mask(history, decisions, delays)
        np.testing.assert_array_equal(last.mask, [1.0, 1.0])
        np.testing.assert_array_equal(last.values, [1.0, 30.0])

    def test_unavailable_value_is_flagged_missing(self):
        """
        Test a selected value that is absent from the source.

        :assert: The mask stays 0 and the missing flag is set.
        """
        observed = apply_delayed_mask(
            [[4.0, 5.0]], [[1.0, 1.0]], [0, 0], availability=[[1.0, 0.0]]
        )
        np.testing.assert_array_equal(observed.mask, [1.0, 0.0])
        np.testing.assert_array_equal(observed.missing, [0.0, 1.0])
        self.assertEqual(observed.values[1], SENTINEL)

    def test_batched_history(self):
        """
        Test leading batch axes.

        :assert: The result keeps the batch axis.
        """
        history = np.ones((4, 3, 2))
        observed = apply_delayed_mask(history, history, [1, 0], t=0)
        self.assertEqual(observed.mask.shape, (4, 2))
        np.testing.assert_array_equal(observed.mask[:, 0], 0.0)

    def test_invalid_arguments_raise(self):
        """
        Test wrong delay counts, negative delays and out-of-range steps.

        :assert: ShapeError or ValueError is raised.
        """
        history = np.ones((2, 2))
        with self.assertRaises(ShapeError):
            apply_delayed_mask(history, history, [0])
        with self.assertRaises(ShapeError):
            apply_delayed_mask(history, history, [0, -1])
        with self.assertRaises(ValueError):
            apply_delayed_mask(history, history, [0, 0], t=2)


class TestStaticSetting(unittest.TestCase):
    """
    Unit tests for nesting and persistent static observations.
    """

    @settings(max_examples=200, deadline=None)
    @given(_history(max_steps=8))
    def test_cumulative_masks_are_nested(self, drawn):
        """
        Test folding random decisions with `enforce_static_nesting`.

        :param drawn: Random decisions.
        :assert: Every mask dominates the one before it.
        """
        _, decisions = drawn
        cumulative = np.zeros(decisions.shape[1])
        for row in decisions:
            updated = enforce_static_nesting(cumulative, row)
            self.assertTrue(np.all(updated >= cumulative))
            self.assertTrue(np.all(updated >= row))
            cumulative = updated

    def test_first_measured_value_persists(self):
        """
        Test a static observation across two steps.

        :assert: The value read first is kept though the feature changes.
        """
        observation = empty_observation(2)
        observation = update_static_observation(
            observation, [7.0, 8.0], [1.0, 0.0]
        )
        observation = update_static_observation(
            observation, [9.0, 6.0], [1.0, 1.0]
        )
        np.testing.assert_array_equal(observation.values, [7.0, 6.0])
        np.testing.assert_array_equal(observation.mask, [1.0, 1.0])

    def test_unavailable_value_read_later(self):
        """
        Test a static feature selected while its value is missing.

        :assert: It is flagged missing and read at the next available
        step.
        """
        observation = update_static_observation(
            empty_observation(1), [3.0], [1.0], available=[0.0]
        )
        self.assertEqual(observation.missing[0], 1.0)
        self.assertEqual(observation.mask[0], 0.0)
        observation = update_static_observation(
            observation, [4.0], [1.0], available=[1.0]
        )
        self.assertEqual(observation.values[0], 4.0)

    def test_nesting_shape_mismatch_raises(self):
        """
        Test OR of vectors with different shapes.

        :assert: ShapeError is raised.
        """
        with self.assertRaises(ShapeError):
            enforce_static_nesting([0.0, 1.0], [1.0])


class TestDecisions(unittest.TestCase):
    """
    Unit tests for sampling and log-probabilities.
    """

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 10), st.integers(0, 2**32 - 1))
    def test_decision_probabilities_normalize(self, n_features, seed):
        """
        Test that the decision distribution sums to one.

        :param n_features: Number of features.
        :param seed: Seed for the probabilities.
        :assert: Summing exp(log-prob) over all 2^d vectors gives 1.
        """
        rng = np.random.default_rng(seed)
        probs = np.clip(rng.random(n_features), 1e-3, 1 - 1e-3)
        vectors = (
            (np.arange(2**n_features)[:, None] >> np.arange(n_features)) & 1
        ).astype(float)
        total = np.exp(log_prob_values(probs, vectors)).sum()
        self.assertAlmostEqual(total, 1.0, delta=1e-10)

    def test_tape_and_numpy_log_prob_agree(self):
        """
        Test `decision_log_prob` against a numpy evaluation.

        :assert: Both give the same values; a zero keep weight drops a
        coordinate.
        """
        probs = np.array([[0.2, 0.7, 0.5], [0.9, 0.1, 0.3]])
        bits = np.array([[1.0, 0.0, 1.0], [0.0, 0.0, 1.0]])
        tape = Tape()
        value = tape.value(
            decision_log_prob(tape, tape.constant(probs), bits)
        )
        np.testing.assert_allclose(value, log_prob_values(probs, bits))
        kept = tape.value(
            decision_log_prob(
                tape, tape.constant(probs), bits, keep=[1.0, 1.0, 0.0]
            )
        )
        np.testing.assert_allclose(
            kept, log_prob_values(probs[:, :2], bits[:, :2])
        )

    def test_sample_decision_frequency(self):
        """
        Test Bernoulli sampling frequencies.

        :assert: Empirical rates are close to the probabilities.
        """
        rng = np.random.default_rng(0)
        probs = np.tile([0.1, 0.5, 0.9], (20000, 1))
        draws = sample_decision(probs, rng)
        np.testing.assert_allclose(
            draws.mean(axis=0), [0.1, 0.5, 0.9], atol=0.02
        )
        with self.assertRaises(ValueError):
            sample_decision(probs, None)


class TestStepCost(unittest.TestCase):
    """
    Unit tests for `step_cost`.
    """

    def test_weighted_cost(self):
        """
        Test lambda, eta and availability together.

        :assert: The adverse label is discounted and unavailable
        features cost nothing.
        """
        model = CostModel([1.0, 2.0, 4.0], lam=0.5, eta=0.25)
        bits = [1.0, 1.0, 1.0]
        self.assertAlmostEqual(step_cost(bits, model, 0.0), 3.5)
        self.assertAlmostEqual(step_cost(bits, model, 1.0), 0.875)
        self.assertAlmostEqual(
            step_cost(bits, model, 0.0, available=[1.0, 0.0, 1.0]), 2.5
        )

    def test_batched_cost(self):
        """
        Test a batch of decisions.

        :assert: One cost per row.
        """
        model = CostModel([1.0, 1.0])
        costs = step_cost([[1.0, 0.0], [1.0, 1.0]], model, [0.0, 0.0])
        np.testing.assert_array_equal(costs, [1.0, 2.0])

    def test_feature_count_mismatch_raises(self):
        """
        Test a decision wider than the cost vector.

        :assert: ShapeError is raised.
        """
        with self.assertRaises(ShapeError):
            step_cost([1.0, 1.0, 1.0], CostModel([1.0, 1.0]), 0.0)


if __name__ == "__main__":
    unittest.main()
