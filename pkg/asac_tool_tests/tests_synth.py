"""
Tests: Synthetic data
"""

import unittest
from unittest.mock import MagicMock

import numpy as np

from asac_tool.synth import (
    ArProcessSpec,
    SyntheticSpec,
    add_noisy_features,
    binary_ydep_probability,
    gen_ar_gaussian,
    generate_dataset,
    inject_missingness,
    label_binary_ydep,
    label_exp_sum,
    label_weighted,
    noise_std,
)
from asac_tool_tests.fixtures import random_episodes


class TestArProcess(unittest.TestCase):
    """
    Unit tests for `gen_ar_gaussian`.
    """

    def test_recurrence(self):
        """
        Test the AR(1) recurrence with shocks recovered from the output.

        :assert: phi = 1 holds features constant and phi = 0 gives
        independent standard normals.
        """
        features = gen_ar_gaussian(
            ArProcessSpec((1.0, 0.0), n_steps=5, n_episodes=4000, seed=3)
        )
        self.assertEqual(features.shape, (4000, 5, 2))
        np.testing.assert_array_equal(
            features[:, :, 0], np.repeat(features[:, :1, 0], 5, axis=1)
        )
        self.assertAlmostEqual(features[:, :, 1].std(), 1.0, delta=0.03)
        lagged = np.corrcoef(
            features[:, 1:, 1].ravel(), features[:, :-1, 1].ravel()
        )[0, 1]
        self.assertLess(abs(lagged), 0.03)

    def test_same_seed_same_draws(self):
        """
        Test reproducibility.

        :assert: Equal seeds give equal arrays; different seeds differ.
        """
        spec = ArProcessSpec((0.5,), n_steps=3, n_episodes=10, seed=1)
        np.testing.assert_array_equal(
            gen_ar_gaussian(spec), gen_ar_gaussian(spec)
        )
        other = ArProcessSpec((0.5,), n_steps=3, n_episodes=10, seed=2)
        self.assertFalse(
            np.array_equal(gen_ar_gaussian(spec), gen_ar_gaussian(other))
        )

    def test_stationary_variance(self):
        """
        Test the variance at the last of ten steps for small phi.

        :assert: It is within 10% of (1 - phi)^2 / (1 - phi^2).
        """
        phi = (0.0, 0.2, 0.5)
        features = gen_ar_gaussian(
            ArProcessSpec(phi, n_steps=10, n_episodes=20000, seed=5)
        )
        for i, c in enumerate(phi):
            with self.subTest(phi=c):
                stationary = (1.0 - c) ** 2 / (1.0 - c**2)
                self.assertAlmostEqual(
                    features[:, 9, i].var() / stationary, 1.0, delta=0.1
                )

    def test_lag_one_correlation(self):
        """
        Test the lag-one correlation for phi = 0.9 against the variance
        recursion ``V_t = phi^2 V_{t-1} + (1 - phi)^2`` from ``V_1 = 1``.

        :assert: The correlation between steps 4 and 5 matches
        ``phi * sqrt(V_4 / V_5)``.
        """
        phi = 0.9
        features = gen_ar_gaussian(
            ArProcessSpec((phi,), n_steps=5, n_episodes=20000, seed=6)
        )
        variances = [1.0]
        for _ in range(4):
            variances.append(phi**2 * variances[-1] + (1.0 - phi) ** 2)
        expected = phi * np.sqrt(variances[3] / variances[4])
        lagged = np.corrcoef(features[:, 4, 0], features[:, 3, 0])[0, 1]
        self.assertAlmostEqual(lagged, expected, delta=0.005)
        self.assertAlmostEqual(
            features[:, 4, 0].var(), variances[4], delta=0.05 * variances[4]
        )

    def test_invalid_phi_raises(self):
        """
        Test an autoregression outside [0, 1].

        :assert: ValueError is raised.
        """
        with self.assertRaises(ValueError):
            ArProcessSpec((1.5,))


class TestLabels(unittest.TestCase):
    """
    Unit tests for the label mechanisms.
    """

    def test_noise_reading(self):
        """
        Test both readings of a noise parameter.

        :assert: Variance is square-rooted and std is used as given.
        """
        self.assertAlmostEqual(noise_std(0.01), 0.1)
        self.assertAlmostEqual(noise_std(0.01, "std"), 0.01)
        with self.assertRaises(ValueError):
            noise_std(0.1, "precision")

    def test_noise_free_labels(self):
        """
        Test both regression labels with zero noise.

        :assert: They match the closed forms.
        """
        features = np.array([[1.0, -3.0, 2.0, 4.0, 9.0]])
        np.testing.assert_allclose(
            label_exp_sum(features, 0.0), [np.exp(-0.1 * 13.0)]
        )
        np.testing.assert_allclose(
            label_weighted(features, 0.0),
            [np.exp(-abs(0.1 - 0.6 + 0.6 + 1.6))],
        )

    def test_weighted_label_needs_four_features(self):
        """
        Test the weighted label on three features.

        :assert: ValueError is raised.
        """
        with self.assertRaises(ValueError):
            label_weighted(np.ones((2, 3)))

    def test_label_noise_spread(self):
        """
        Test the label noise for both readings.

        :assert: The residual std matches the reading.
        """
        features = np.zeros((20000, 2))
        for reading, expected in (("variance", 0.1**0.5), ("std", 0.1)):
            labels = label_exp_sum(
                features, 0.1, seed=4, noise_reading=reading
            )
            self.assertAlmostEqual(
                (labels - 1.0).std(), expected, delta=0.01
            )

    def test_binary_probability(self):
        """
        Test the label-dependent probability.

        :assert: It peaks at a feature sum of 2 and decays away from it.
        """
        probability = binary_ydep_probability([[1.0, 1.0], [5.0, 7.0]])
        self.assertAlmostEqual(probability[0], 1.0)
        self.assertAlmostEqual(probability[1], np.exp(-1.0))

    def test_binary_labels_follow_probability(self):
        """
        Test binary label frequencies without noise.

        :assert: Labels are 0/1 and their mean matches the probability.
        """
        features = np.tile([[12.0, 0.0]], (40000, 1))
        labels = label_binary_ydep(features, seed=5, variance=0.0)
        self.assertTrue(set(np.unique(labels)) <= {0.0, 1.0})
        self.assertAlmostEqual(labels.mean(), np.exp(-1.0), delta=0.01)

    def test_noisy_copies(self):
        """
        Test `add_noisy_features`.

        :assert: True columns come first and copies carry the noise.
        """
        features = np.zeros((10000, 3))
        combined = add_noisy_features(features, 0.04, seed=2)
        self.assertEqual(combined.shape, (10000, 6))
        np.testing.assert_array_equal(combined[:, :3], 0.0)
        self.assertAlmostEqual(combined[:, 3:].std(), 0.2, delta=0.01)
        with self.assertRaises(ValueError):
            add_noisy_features(features, 0.0)


class TestMissingness(unittest.TestCase):
    """
    Unit tests for `inject_missingness`.
    """

    def test_rate_and_zeroed_values(self):
        """
        Test marking a fraction of cells missing.

        :assert: About the requested share is unavailable and those
        values are zeroed.
        """
        episodes = random_episodes(200, 10, 5, seed=8)
        damaged = inject_missingness(episodes, 0.3, seed=1)
        availability = np.stack([e.availability for e in damaged])
        self.assertAlmostEqual(1.0 - availability.mean(), 0.3, delta=0.02)
        for episode in damaged:
            hidden = episode.features[episode.availability == 0]
            self.assertFalse(np.any(hidden))

    def test_invalid_rate_raises(self):
        """
        Test a rate of one.

        :assert: ValueError is raised.
        """
        with self.assertRaises(ValueError):
            inject_missingness([], 1.0)


class TestGenerateDataset(unittest.TestCase):
    """
    Unit tests for `generate_dataset`.
    """

    def setUp(self):
        self.logger = MagicMock()

    def test_noisy_binary_dataset(self):
        """
        Test a classification dataset with noisy copies.

        :assert: Widths double, ids run from 1 and labels are binary.
        """
        spec = SyntheticSpec(
            label="binary-ydep",
            n_features=3,
            n_steps=4,
            n_episodes=6,
            gamma=0.5,
            seed=2,
        )
        episodes = generate_dataset(spec, logger=self.logger)
        self.assertEqual(len(episodes), 6)
        self.assertEqual(episodes[0].features.shape, (4, 6))
        self.assertEqual([e.episode_id for e in episodes][:2], ["1", "2"])
        labels = np.concatenate([e.labels for e in episodes])
        self.assertTrue(set(np.unique(labels)) <= {0.0, 1.0})
        self.logger.info.assert_called_once()

    def test_static_dataset_is_constant(self):
        """
        Test the static variant.

        :assert: Every episode repeats its first row.
        """
        spec = SyntheticSpec(
            n_features=2, n_steps=3, n_episodes=4, phi=0.3, static=True
        )
        for episode in generate_dataset(spec, logger=self.logger):
            np.testing.assert_array_equal(
                episode.features, np.repeat(episode.features[:1], 3, axis=0)
            )

    def test_generation_is_reproducible(self):
        """
        Test two generations from one spec.

        :assert: Features and labels are identical.
        """
        spec = SyntheticSpec(
            label="weighted", n_features=4, n_episodes=5, missing_rate=0.2
        )
        first = generate_dataset(spec, logger=self.logger)
        second = generate_dataset(spec, logger=self.logger)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.features, b.features)
            np.testing.assert_array_equal(a.labels, b.labels)
            np.testing.assert_array_equal(a.availability, b.availability)

    def test_phi_count_mismatch_raises(self):
        """
        Test a phi vector of the wrong length.

        :assert: ValueError is raised.
        """
        with self.assertRaises(ValueError):
            SyntheticSpec(n_features=3, phi=(0.1, 0.2))


if __name__ == "__main__":
    unittest.main()
