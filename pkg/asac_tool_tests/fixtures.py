"""
Shared builders for the unit tests.
"""

import numpy as np

from asac_tool.seqmodel import make_predictor, make_selector
from asac_tool.types import CostModel, Episode, Mode, SensingTrajectory


def numeric_gradient(function, value, eps=1e-6):
    """
    Central finite differences of a scalar ``function`` at ``value``.
    """
    value = np.array(value, dtype=np.float64)
    grad = np.zeros_like(value)
    for index in np.ndindex(value.shape):
        plus, minus = value.copy(), value.copy()
        plus[index] += eps
        minus[index] -= eps
        grad[index] = (function(plus) - function(minus)) / (2 * eps)
    return grad


def log_prob_values(probs, s):
    """
    Bernoulli log-probability of bits ``s`` summed over the last axis.
    """
    probs = np.asarray(probs, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    return np.sum(s * np.log(probs) + (1.0 - s) * np.log1p(-probs), axis=-1)


def tiny_models(n_features=2, hidden_size=3, seed=0, task="regression"):
    """
    A small selector and predictor pair.
    """
    selector = make_selector(n_features, hidden_size=hidden_size, seed=seed)
    predictor = make_predictor(
        n_features, task=task, hidden_size=hidden_size, seed=seed + 1
    )
    return selector, predictor


def random_episodes(n_episodes, length, n_features, seed=0, classes=None):
    """
    Gaussian episodes with Gaussian (or class-index) labels.
    """
    rng = np.random.default_rng(seed)
    episodes = []
    for i in range(n_episodes):
        if classes is None:
            labels = rng.standard_normal(length)
        else:
            labels = rng.integers(0, classes, length)
        episodes.append(
            Episode(
                rng.standard_normal((length, n_features)),
                labels,
                episode_id=str(i + 1),
            )
        )
    return episodes


def unit_costs(n_features, **kwargs) -> CostModel:
    """
    Cost model charging 1 per feature.
    """
    return CostModel(np.ones(n_features), **kwargs)


def make_trajectory(decisions, labels, predictions=None) -> SensingTrajectory:
    """
    A trajectory carrying only what the metrics read.

    :param decisions: ``(B, T, d)`` measurement bits.
    :param labels: ``(B, T)`` labels.
    :param predictions: ``(B, T, k)`` predictions; zeros when omitted.
    """
    decisions = np.asarray(decisions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if predictions is None:
        predictions = np.zeros(labels.shape + (1,))
    zeros = np.zeros_like(decisions)
    return SensingTrajectory(
        episode_ids=tuple(str(i) for i in range(labels.shape[0])),
        features=zeros,
        labels=labels,
        availability=np.ones_like(decisions),
        probabilities=np.full_like(decisions, 0.5),
        sampled=decisions,
        decisions=decisions,
        charged=decisions,
        observed_values=zeros,
        observed_mask=decisions,
        missing=zeros,
        predictions=np.asarray(predictions, dtype=np.float64),
        losses=np.zeros(labels.shape),
        costs=decisions.sum(axis=-1),
        mode=Mode.TIME_SERIES,
    )
