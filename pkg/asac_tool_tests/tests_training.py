"""
Tests: Training
"""

import os
import tempfile
import unittest
from dataclasses import replace
from unittest.mock import MagicMock

import numpy as np

from asac_tool.autodiff import Optimizer, Tape, global_norm
from asac_tool.errors import ShapeError
from asac_tool.sensing import (
    apply_delayed_mask,
    empty_observation,
    enforce_static_nesting,
    update_static_observation,
)
from asac_tool.training import (
    MovingAverageBaseline,
    NetworkSpec,
    group_by_length,
    gradient_keep_mask,
    joint_train,
    predictor_gradient,
    predictor_update,
    replay_log_probs,
    reward_to_come,
    rollout,
    rollout_dataset,
    selector_gradient,
    selector_update,
)
from asac_tool.types import (
    CostModel,
    Episode,
    Mode,
    TrainingConfig,
)
from asac_tool_tests.fixtures import (
    log_prob_values,
    numeric_gradient,
    random_episodes,
    tiny_models,
    unit_costs,
)


def _all_decision_sequences(length, n_features):
    """
    ``(2^(T*d), T, d)`` array enumerating every decision sequence.
    """
    bits = length * n_features
    codes = np.arange(2**bits)[:, None] >> np.arange(bits)
    return (codes & 1).astype(float).reshape(-1, length, n_features)


def _sequence_probabilities(trajectory):
    """
    Probability of each forced sequence under the recorded selector
    outputs.
    """
    log_probs = log_prob_values(trajectory.probabilities, trajectory.sampled)
    return np.exp(log_probs.sum(axis=1))


class TestRollout(unittest.TestCase):
    """
    Unit tests for `rollout`.
    """

    def setUp(self):
        self.selector, self.predictor = tiny_models(n_features=3)
        self.episodes = random_episodes(5, 4, 3, seed=1)
        self.costs = CostModel([1.0, 2.0, 3.0], lam=0.1)

    def test_trajectory_shapes(self):
        """
        Test a time-series rollout over a batch.

        :assert: Arrays are (B, T, d) or (B, T), and costs follow the
        charged bits.
        """
        trajectory = rollout(
            self.selector,
            self.predictor,
            self.episodes,
            self.costs,
            "time-series",
            np.random.default_rng(0),
        )
        self.assertEqual(trajectory.sampled.shape, (5, 4, 3))
        self.assertEqual(trajectory.losses.shape, (5, 4))
        self.assertEqual(trajectory.predictions.shape, (5, 4, 1))
        self.assertEqual(trajectory.episode_ids, ("1", "2", "3", "4", "5"))
        np.testing.assert_allclose(
            trajectory.costs, 0.1 * trajectory.charged @ [1.0, 2.0, 3.0]
        )
        np.testing.assert_array_equal(
            trajectory.decisions, trajectory.sampled
        )

    def test_static_invariants(self):
        """
        Test a static rollout.

        :assert: Masks are nested, each feature is charged at most once
        and persisted values match the first reading.
        """
        trajectory = rollout(
            self.selector,
            self.predictor,
            self.episodes,
            self.costs,
            Mode.STATIC,
            np.random.default_rng(3),
        )
        self.assertTrue(np.all(np.diff(trajectory.decisions, axis=1) >= 0))
        self.assertTrue(np.all(trajectory.charged.sum(axis=1) <= 1))
        first = trajectory.charged.argmax(axis=1)
        for b in range(5):
            for i in range(3):
                if trajectory.observed_mask[b, -1, i]:
                    self.assertEqual(
                        trajectory.observed_values[b, -1, i],
                        trajectory.features[b, first[b, i], i],
                    )

    def test_forced_decisions_need_no_generator(self):
        """
        Test forced decisions.

        :assert: The decisions are used as given and two runs agree.
        """
        forced = np.zeros((5, 4, 3))
        forced[:, 1, 2] = 1.0
        runs = [
            rollout(
                self.selector,
                self.predictor,
                self.episodes,
                self.costs,
                "time-series",
                None,
                decisions=forced,
            )
            for _ in range(2)
        ]
        np.testing.assert_array_equal(runs[0].sampled, forced)
        np.testing.assert_array_equal(runs[0].losses, runs[1].losses)

    def test_threshold_rule(self):
        """
        Test the deterministic decision rule.

        :assert: Exactly the probabilities at or above one half are
        measured.
        """
        trajectory = rollout(
            self.selector,
            self.predictor,
            self.episodes,
            self.costs,
            "time-series",
            None,
            rule="threshold",
        )
        np.testing.assert_array_equal(
            trajectory.sampled, trajectory.probabilities >= 0.5
        )

    def test_delayed_observation(self):
        """
        Test a rollout with a one-step delay on the first feature.

        :assert: The first feature is never observed at step 0 and is
        observed later exactly when it was selected a step before.
        """
        costs = CostModel([1.0, 1.0, 1.0], delays=[1, 0, 0])
        trajectory = rollout(
            self.selector,
            self.predictor,
            self.episodes,
            costs,
            "time-series",
            np.random.default_rng(4),
        )
        np.testing.assert_array_equal(trajectory.observed_mask[:, 0, 0], 0)
        np.testing.assert_array_equal(
            trajectory.observed_mask[:, 1:, 0], trajectory.sampled[:, :-1, 0]
        )

    def test_missing_values_are_not_charged(self):
        """
        Test selecting features absent from the source data.

        :assert: Missing flags are set, nothing is charged there and
        the keep mask drops those coordinates.
        """
        availability = np.ones((4, 3))
        availability[2, 1] = 0.0
        episode = Episode(
            np.ones((4, 3)), np.zeros(4), availability=availability
        )
        trajectory = rollout(
            self.selector,
            self.predictor,
            [episode],
            self.costs,
            "time-series",
            None,
            decisions=np.ones((1, 4, 3)),
        )
        self.assertEqual(trajectory.missing[0, 2, 1], 1.0)
        self.assertEqual(trajectory.charged[0, 2, 1], 0.0)
        self.assertEqual(trajectory.observed_mask[0, 2, 1], 0.0)
        keep = gradient_keep_mask(trajectory)
        self.assertEqual(keep[0, 2, 1], 0.0)
        self.assertEqual(keep.sum(), 11.0)

    def test_invalid_batches_raise(self):
        """
        Test unequal lengths, static delays, bad rules and shapes.

        :assert: ShapeError or ValueError is raised.
        """
        mixed = self.episodes[:2] + random_episodes(1, 2, 3)
        rng = np.random.default_rng(0)
        with self.assertRaises(ShapeError):
            rollout(
                self.selector, self.predictor, mixed, self.costs, "static", rng
            )
        with self.assertRaises(ValueError):
            rollout(
                self.selector,
                self.predictor,
                self.episodes,
                CostModel(np.ones(3), delays=[0, 1, 0]),
                "static",
                rng,
            )
        with self.assertRaises(ValueError):
            rollout(
                self.selector,
                self.predictor,
                self.episodes,
                self.costs,
                "time-series",
                rng,
                rule="greedy",
            )
        with self.assertRaises(ShapeError):
            rollout(
                self.selector,
                self.predictor,
                self.episodes,
                self.costs,
                "time-series",
                None,
                decisions=np.zeros((5, 4, 2)),
            )
        with self.assertRaises(ValueError):
            rollout(
                self.selector,
                self.predictor,
                self.episodes,
                self.costs,
                "time-series",
                None,
            )


class TestGradientEstimators(unittest.TestCase):
    """
    Checks of the predictor gradient and the score-function estimator.
    """

    N_FEATURES, LENGTH = 2, 2

    def setUp(self):
        self.selector, self.predictor = tiny_models(
            n_features=self.N_FEATURES, seed=5
        )
        self.episode = random_episodes(1, self.LENGTH, self.N_FEATURES)[0]
        self.costs = CostModel([0.3, 0.6], lam=0.5)

    def _enumerated(self, selector):
        sequences = _all_decision_sequences(self.LENGTH, self.N_FEATURES)
        return rollout(
            selector,
            self.predictor,
            [self.episode] * len(sequences),
            self.costs,
            "time-series",
            None,
            decisions=sequences,
        )

    def _exact_objective(self, selector):
        trajectory = self._enumerated(selector)
        returns = trajectory.total_loss + trajectory.total_cost
        return float(np.sum(_sequence_probabilities(trajectory) * returns))

    def _exact_gradient(self):
        trajectory = self._enumerated(self.selector)
        weights = _sequence_probabilities(trajectory)
        self.assertAlmostEqual(weights.sum(), 1.0, places=12)
        grads, _ = selector_gradient(
            self.selector, [trajectory], self.costs, episode_weights=[weights]
        )
        return grads

    def test_reward_to_come(self):
        """
        Test the reversed cumulative sum.

        :assert: Each entry sums the rewards from that step on.
        """
        np.testing.assert_array_equal(
            reward_to_come([[1.0, 2.0, 3.0], [0.0, 1.0, 0.0]]),
            [[6.0, 5.0, 3.0], [1.0, 1.0, 0.0]],
        )

    def test_reward_to_come_matches_double_sum(self):
        """
        Test the reward-to-come weighting against the unreorganized sum
        ``sum_t sum_{j <= t} r_t * grad log pi_j``.

        :assert: Both gradients agree to 1e-12 on a fixed trajectory.
        """
        trajectory = rollout(
            self.selector,
            self.predictor,
            random_episodes(3, 4, 2, seed=12),
            self.costs,
            "time-series",
            np.random.default_rng(6),
        )
        reorganized, _ = selector_gradient(
            self.selector, [trajectory], self.costs
        )
        rewards = (trajectory.losses + trajectory.costs) / 3.0
        tape = Tape()
        log_probs = replay_log_probs(self.selector, trajectory, tape)
        total = None
        for t in range(trajectory.length):
            for j in range(t + 1):
                term = tape.sum(
                    tape.mul(tape.constant(rewards[:, t]), log_probs[j])
                )
                total = term if total is None else tape.add(total, term)
        literal = self.selector.gradients(tape.backward(total))
        for name, grad in literal.items():
            with self.subTest(block=name):
                np.testing.assert_allclose(
                    reorganized[name], grad, rtol=0, atol=1e-12
                )

    def test_predictor_gradient_matches_differences(self):
        """
        Test the predictor gradient with decisions held fixed.

        :assert: Every block agrees with central differences of the
        returned objective.
        """
        episodes = random_episodes(3, 3, 2, seed=7)
        trajectory = rollout(
            self.selector,
            self.predictor,
            episodes,
            self.costs,
            "time-series",
            np.random.default_rng(1),
        )
        grads, _ = predictor_gradient(self.predictor, [trajectory])
        for name, value in self.predictor.params.items():

            def objective(perturbed, name=name):
                params = {**self.predictor.params, name: perturbed}
                model = self.predictor.with_params(params)
                return predictor_gradient(model, [trajectory])[1]

            with self.subTest(block=name):
                np.testing.assert_allclose(
                    grads[name],
                    numeric_gradient(objective, value),
                    rtol=1e-4,
                    atol=1e-7,
                )

    def test_enumerated_gradient_matches_differences(self):
        """
        Test the estimator weighted by exact sequence probabilities.

        :assert: It equals central differences of the exact expected
        loss-plus-cost.
        """
        grads = self._exact_gradient()
        for name, value in self.selector.params.items():

            def objective(perturbed, name=name):
                params = {**self.selector.params, name: perturbed}
                return self._exact_objective(self.selector.with_params(params))

            with self.subTest(block=name):
                np.testing.assert_allclose(
                    grads[name],
                    numeric_gradient(objective, value),
                    rtol=1e-4,
                    atol=1e-8,
                )

    def test_score_has_zero_mean(self):
        """
        Test the expected score over all decision sequences.

        :assert: The probability-weighted sum of log-probability
        gradients vanishes.
        """
        trajectory = self._enumerated(self.selector)
        weights = _sequence_probabilities(trajectory)
        tape = Tape()
        total = None
        for ref in replay_log_probs(self.selector, trajectory, tape):
            term = tape.sum(tape.mul(tape.constant(weights), ref))
            total = term if total is None else tape.add(total, term)
        grads = self.selector.gradients(tape.backward(total))
        for name, grad in grads.items():
            with self.subTest(block=name):
                np.testing.assert_allclose(grad, 0.0, atol=1e-10)

    def test_sampled_estimate_is_unbiased(self):
        """
        Test the sampled estimator against the enumerated gradient.

        :assert: Chunk means agree with the exact gradient within
        sampling error on nearly every coordinate.
        """
        exact = self._exact_gradient()
        rng = np.random.default_rng(2024)
        chunks = {name: [] for name in exact}
        for _ in range(100):
            trajectory = rollout(
                self.selector,
                self.predictor,
                [self.episode] * 1000,
                self.costs,
                "time-series",
                rng,
            )
            grads, _ = selector_gradient(
                self.selector, [trajectory], self.costs
            )
            for name, grad in grads.items():
                chunks[name].append(grad)

        z_scores = []
        for name, values in chunks.items():
            values = np.stack(values)
            mean = values.mean(axis=0)
            error = values.std(axis=0, ddof=1) / np.sqrt(len(values))
            flat_error, flat_diff = error.ravel(), (mean - exact[name]).ravel()
            degenerate = flat_error == 0
            np.testing.assert_allclose(flat_diff[degenerate], 0.0, atol=1e-12)
            z_scores.append(flat_diff[~degenerate] / flat_error[~degenerate])
        z_scores = np.abs(np.concatenate(z_scores))
        self.assertLessEqual(np.mean(z_scores > 3.0), 0.02)
        self.assertLess(z_scores.max(), 5.0)

    def test_baseline_keeps_enumerated_gradient(self):
        """
        Test a constant baseline under exact enumeration.

        :assert: Subtracting it leaves the gradient unchanged.
        """
        exact = self._exact_gradient()
        baseline = MovingAverageBaseline(0.5)
        baseline.update(3.0)
        trajectory = self._enumerated(self.selector)
        grads, _ = selector_gradient(
            self.selector,
            [trajectory],
            self.costs,
            baseline=baseline,
            episode_weights=[_sequence_probabilities(trajectory)],
        )
        for name, grad in grads.items():
            np.testing.assert_allclose(grad, exact[name], atol=1e-10)


class TestUpdates(unittest.TestCase):
    """
    Unit tests for `predictor_update` and `selector_update`.
    """

    LEARNING_RATE = 0.1

    def setUp(self):
        self.selector, self.predictor = tiny_models(n_features=2, seed=9)
        self.costs = CostModel([0.3, 0.6], lam=0.5)
        self.trajectory = rollout(
            self.selector,
            self.predictor,
            random_episodes(4, 3, 2, seed=2),
            self.costs,
            "time-series",
            np.random.default_rng(3),
        )

    def _step(self, params, grads):
        return {
            name: value - self.LEARNING_RATE * grads[name]
            for name, value in params.items()
        }

    def test_predictor_update_descends(self):
        """
        Test one plain gradient step on the predictor.

        :assert: The new parameters are the old ones minus the learning
        rate times the mini-batch gradient.
        """
        grads, _ = predictor_gradient(self.predictor, [self.trajectory])
        updated = predictor_update(
            self.predictor,
            [self.trajectory],
            Optimizer("sgd", self.LEARNING_RATE),
        )
        expected = self._step(self.predictor.params, grads)
        for name, value in updated.params.items():
            np.testing.assert_allclose(value, expected[name], rtol=1e-12)

    def test_predictor_loss_decreases(self):
        """
        Test repeated predictor updates on a fixed, fully observed
        dataset at zero cost.

        :assert: The training loss strictly decreases over the first 50
        iterations.
        """
        episodes = random_episodes(4, 3, 2, seed=8)
        trajectory = rollout(
            self.selector,
            self.predictor,
            episodes,
            CostModel([0.3, 0.6], lam=0.0),
            "time-series",
            None,
            decisions=np.ones((4, 3, 2)),
        )
        predictor = self.predictor
        optimizer = Optimizer("sgd", 0.01)
        losses = []
        for _ in range(50):
            losses.append(predictor_gradient(predictor, [trajectory])[1])
            predictor = predictor_update(predictor, [trajectory], optimizer)
        self.assertTrue(np.all(np.diff(losses) < 0), losses)

    def test_selector_update_without_clipping(self):
        """
        Test one plain gradient step on the selector with a loose clip.

        :assert: The step follows the score-function estimate exactly.
        """
        grads, _ = selector_gradient(
            self.selector, [self.trajectory], self.costs
        )
        updated = selector_update(
            self.selector,
            [self.trajectory],
            Optimizer("sgd", self.LEARNING_RATE),
            self.costs,
            TrainingConfig(clip_norm=1e6),
        )
        expected = self._step(self.selector.params, grads)
        for name, value in updated.params.items():
            np.testing.assert_allclose(value, expected[name], rtol=1e-12)

    def test_selector_update_clips(self):
        """
        Test a clip norm far below the gradient norm.

        :assert: The step has global norm learning rate times clip norm
        and the clipping is logged at DEBUG.
        """
        clip_norm, logger = 1e-4, MagicMock()
        updated = selector_update(
            self.selector,
            [self.trajectory],
            Optimizer("sgd", self.LEARNING_RATE),
            self.costs,
            TrainingConfig(clip_norm=clip_norm),
            logger=logger,
        )
        step = {
            name: value - self.selector.params[name]
            for name, value in updated.params.items()
        }
        self.assertAlmostEqual(
            global_norm(step), self.LEARNING_RATE * clip_norm, places=12
        )
        logger.debug.assert_called_once()

    def test_missing_optimizer_raises(self):
        """
        Test both updates without an optimizer.

        :assert: ValueError is raised.
        """
        with self.assertRaises(ValueError):
            predictor_update(self.predictor, [self.trajectory], None)
        with self.assertRaises(ValueError):
            selector_update(
                self.selector,
                [self.trajectory],
                None,
                self.costs,
                TrainingConfig(),
            )


class TestMissingData(unittest.TestCase):
    """
    Observations, gradients and costs around values missing from the
    source data.
    """

    N_EPISODES, LENGTH, N_FEATURES = 8, 4, 3

    def setUp(self):
        rng = np.random.default_rng(5)
        shape = (self.N_EPISODES, self.LENGTH, self.N_FEATURES)
        self.features = rng.standard_normal(shape)
        self.availability = (rng.random(shape) >= 0.4).astype(float)
        self.hidden = np.where(
            self.availability > 0,
            self.features,
            rng.standard_normal(shape) * 100.0,
        )
        self.decisions = (rng.random(shape) < 0.7).astype(float)
        self.assertFalse(np.array_equal(self.features, self.hidden))

    def test_delayed_observations_ignore_missing_values(self):
        """
        Test observations built from raw arrays that differ only behind
        missing flags.

        :assert: Values, masks and missing flags are identical at every
        step.
        """
        delays = np.array([0, 1, 0])
        for t in range(self.LENGTH):
            first, second = (
                apply_delayed_mask(
                    values[:, : t + 1],
                    self.decisions[:, : t + 1],
                    delays,
                    availability=self.availability[:, : t + 1],
                )
                for values in (self.features, self.hidden)
            )
            with self.subTest(step=t):
                np.testing.assert_array_equal(first.values, second.values)
                np.testing.assert_array_equal(first.mask, second.mask)
                np.testing.assert_array_equal(first.missing, second.missing)

    def test_static_observations_ignore_missing_values(self):
        """
        Test static observations built from the same raw arrays.

        :assert: The persisted values are identical at every step.
        """
        shape = (self.N_EPISODES, self.N_FEATURES)
        observations = []
        for values in (self.features, self.hidden):
            observed = empty_observation(shape)
            in_force, steps = np.zeros(shape), []
            for t in range(self.LENGTH):
                in_force = enforce_static_nesting(
                    in_force, self.decisions[:, t]
                )
                observed = update_static_observation(
                    observed, values[:, t], in_force, self.availability[:, t]
                )
                steps.append(observed.values)
            observations.append(np.stack(steps))
        np.testing.assert_array_equal(observations[0], observations[1])

    def test_gradients_ignore_missing_values(self):
        """
        Test gradients of a trajectory whose stored features are replaced
        behind missing flags.

        :assert: Both gradients are exactly equal and missing cells are
        never charged.
        """
        selector, predictor = tiny_models(n_features=3, seed=2)
        costs = unit_costs(3, lam=0.2)
        episodes = [
            Episode(features, np.zeros(self.LENGTH), availability, str(i))
            for i, (features, availability) in enumerate(
                zip(self.features, self.availability)
            )
        ]
        trajectory = rollout(
            selector,
            predictor,
            episodes,
            costs,
            "time-series",
            None,
            decisions=self.decisions,
        )
        self.assertFalse(
            np.any(trajectory.charged[trajectory.availability == 0])
        )
        perturbed = replace(trajectory, features=self.hidden)
        for first, second in (
            (
                selector_gradient(selector, [trajectory], costs)[0],
                selector_gradient(selector, [perturbed], costs)[0],
            ),
            (
                predictor_gradient(predictor, [trajectory])[0],
                predictor_gradient(predictor, [perturbed])[0],
            ),
        ):
            for name, grad in first.items():
                np.testing.assert_array_equal(grad, second[name])

    def test_all_missing_episode_has_zero_selector_gradient(self):
        """
        Test an episode whose every value is missing and always selected.

        :assert: Every selector gradient block is exactly zero and
        nothing is charged.
        """
        selector, predictor = tiny_models(n_features=3, seed=4)
        costs = unit_costs(3, lam=0.5)
        episode = Episode(
            self.features[0],
            np.ones(self.LENGTH),
            np.zeros((self.LENGTH, self.N_FEATURES)),
        )
        trajectory = rollout(
            selector,
            predictor,
            [episode],
            costs,
            "time-series",
            None,
            decisions=np.ones((1, self.LENGTH, self.N_FEATURES)),
        )
        self.assertEqual(trajectory.charged.sum(), 0.0)
        grads, _ = selector_gradient(selector, [trajectory], costs)
        for name, grad in grads.items():
            with self.subTest(block=name):
                self.assertFalse(np.any(grad))


class TestMovingAverageBaseline(unittest.TestCase):
    """
    Unit tests for `MovingAverageBaseline`.
    """

    def test_bias_corrected_average(self):
        """
        Test the first updates.

        :assert: The value starts at 0 and is bias-corrected.
        """
        baseline = MovingAverageBaseline(0.5)
        self.assertEqual(baseline.value, 0.0)
        baseline.update(2.0)
        self.assertAlmostEqual(baseline.value, 2.0)
        baseline.update(4.0)
        self.assertAlmostEqual(baseline.value, 2.5 / 0.75)


class TestJointTrain(unittest.TestCase):
    """
    Unit tests for `joint_train` and dataset rollouts.
    """

    def setUp(self):
        self.logger = MagicMock()
        self.dataset = random_episodes(6, 3, 2, seed=3)
        self.network = NetworkSpec(hidden_size=3)

    def _train(self, **kwargs):
        config = TrainingConfig(
            iterations=3, batch_size=4, seed=9, log_every=1, **kwargs
        )
        return joint_train(
            self.dataset,
            self.network,
            unit_costs(2, lam=0.1),
            config,
            logger=self.logger,
        )

    def test_training_is_deterministic(self):
        """
        Test two runs with the same seed.

        :assert: Parameters and histories are identical.
        """
        first, second = self._train(), self._train()
        for a, b in zip(first[:2], second[:2]):
            for name, value in a.params.items():
                np.testing.assert_array_equal(value, b.params[name])
        self.assertEqual(first[2].rows(), second[2].rows())
        self.assertEqual(len(first[2]), 3)
        self.logger.info.assert_called()

    def test_training_moves_parameters(self):
        """
        Test that updates are applied.

        :assert: Both networks differ from their initialization.
        """
        selector, predictor, _ = self._train(baseline="moving-average")
        initial_selector, initial_predictor = tiny_models(seed=9)
        self.assertFalse(
            np.array_equal(
                predictor.params["cell.bias"],
                initial_predictor.params["cell.bias"],
            )
        )
        self.assertFalse(
            np.array_equal(
                selector.params["cell.bias"],
                initial_selector.params["cell.bias"],
            )
        )

    def test_cost_pressure_is_monotonic(self):
        """
        Test training with increasing trade-off weights on a dataset
        where measuring cannot improve the prediction.

        :assert: The mean selector probability after training does not
        increase with lambda (one inversion of at most 0.02 allowed)
        and the largest lambda measures clearly less than the smallest.
        """
        dataset = [
            Episode(np.zeros((3, 2)), np.zeros(3), episode_id=str(i))
            for i in range(16)
        ]
        config = TrainingConfig(
            iterations=40,
            batch_size=8,
            selector_learning_rate=0.1,
            predictor_learning_rate=0.1,
            optimizer="sgd",
            baseline="moving-average",
            baseline_decay=0.9,
            seed=21,
            log_every=0,
        )
        rates = []
        for lam in (0.01, 0.1, 1.0):
            selector, predictor, _ = joint_train(
                dataset,
                self.network,
                unit_costs(2, lam=lam),
                config,
                logger=self.logger,
            )
            trajectories = rollout_dataset(
                selector,
                predictor,
                dataset,
                unit_costs(2, lam=lam),
                "time-series",
                np.random.default_rng(0),
            )
            rates.append(
                float(np.mean([t.probabilities.mean() for t in trajectories]))
            )
        inversions = [
            later - earlier
            for earlier, later in zip(rates, rates[1:])
            if later > earlier
        ]
        self.assertLessEqual(len(inversions), 1, rates)
        self.assertTrue(all(gap <= 0.02 for gap in inversions), rates)
        self.assertLess(rates[2], rates[0] - 0.1, rates)

    def test_checkpoints_are_written(self):
        """
        Test periodic checkpoints.

        :assert: Files are written for every checkpoint iteration.
        """
        with tempfile.TemporaryDirectory() as directory:
            self._train(checkpoint_every=2, checkpoint_dir=directory)
            self.assertEqual(
                sorted(os.listdir(directory)),
                ["predictor_000002.json", "selector_000002.json"],
            )

    def test_static_mode_and_mixed_lengths(self):
        """
        Test training on episodes of two lengths in the static mode.

        :assert: The history has one row per iteration and measurement
        rates lie in [0, 1].
        """
        self.dataset = self.dataset + random_episodes(3, 5, 2, seed=4)
        _, _, history = self._train(mode="static")
        self.assertEqual(len(history), 3)
        self.assertTrue(all(0 <= r <= 1 for r in history.measurement_rate))

    def test_empty_dataset_raises(self):
        """
        Test training without episodes.

        :assert: ValueError is raised.
        """
        self.dataset = []
        with self.assertRaises(ValueError):
            self._train()

    def test_rollout_dataset_covers_every_episode(self):
        """
        Test chunked rollouts over mixed lengths.

        :assert: Each episode appears exactly once.
        """
        episodes = random_episodes(5, 2, 2) + random_episodes(2, 4, 2)
        selector, predictor = tiny_models()
        trajectories = rollout_dataset(
            selector,
            predictor,
            episodes,
            unit_costs(2),
            "time-series",
            np.random.default_rng(0),
            chunk_size=2,
        )
        self.assertEqual(len(trajectories), 4)
        self.assertEqual(sum(t.n_episodes for t in trajectories), 7)

    def test_group_by_length(self):
        """
        Test grouping by episode length.

        :assert: Groups keep first-appearance order.
        """
        episodes = random_episodes(1, 3, 2) + random_episodes(2, 1, 2)
        groups = group_by_length(episodes + episodes[:1])
        self.assertEqual([len(g) for g in groups], [2, 2])
        self.assertEqual(groups[0][0].length, 3)


if __name__ == "__main__":
    unittest.main()
