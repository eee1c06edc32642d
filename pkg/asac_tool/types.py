"""
    Shared value types: episodes, observations, costs, trajectories and
    training bookkeeping.
"""

import math
from dataclasses import dataclass, field
from enum import StrEnum
from typing import TypedDict

import numpy as np


class Task(StrEnum):
    """
    The kind of label the predictor estimates.
    """

    REGRESSION = "regression"
    CLASSIFICATION = "classification"


class Mode(StrEnum):
    """
    Static setting (nested masks, values persist) or time-series setting.
    """

    STATIC = "static"
    TIME_SERIES = "time-series"


class Baseline(StrEnum):
    """
    Variance-reduction baseline for the selector update.
    """

    NONE = "none"
    MOVING_AVERAGE = "moving-average"


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Episode:
    """
    One subject's feature stream.

    :param features: ``(T, d)`` feature values.
    :param labels: ``(T,)`` labels; class indices for classification.
    :param availability: ``(T, d)`` flags, 0 where the source value is
    missing.
    :param episode_id: Identifier used by the CSV format.
    """

    features: np.ndarray
    labels: np.ndarray
    availability: np.ndarray | None = None
    episode_id: str = "0"

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.float64).reshape(-1)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError(
                f"Episode '{self.episode_id}' needs (T, d) features with "
                f"T >= 1, got {features.shape}"
            )
        if labels.shape[0] != features.shape[0]:
            raise ValueError(
                f"Episode '{self.episode_id}' has {labels.shape[0]} labels "
                f"for {features.shape[0]} steps"
            )
        if self.availability is None:
            availability = np.ones(features.shape, dtype=np.float64)
        else:
            availability = np.array(self.availability, dtype=np.float64)
        if availability.shape != features.shape:
            raise ValueError(
                f"Episode '{self.episode_id}' availability shape "
                f"{availability.shape} != features shape {features.shape}"
            )
        # Values behind a missing flag are never read.
        features = np.where(availability > 0, features, 0.0)
        object.__setattr__(self, "features", _frozen(features))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "availability", _frozen(availability))
        object.__setattr__(self, "episode_id", str(self.episode_id))

    @property
    def length(self) -> int:
        """
        Number of steps T.
        """
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        """
        Number of features d.
        """
        return self.features.shape[1]


@dataclass(frozen=True)
class ObservedVector:
    """
    What the networks see at one step.

    ``values`` hold the sentinel wherever ``mask`` is 0; ``missing``
    flags features that were selected but absent from the source data
    (those also have mask 0).
    """

    values: np.ndarray
    mask: np.ndarray
    missing: np.ndarray


@dataclass(frozen=True)
class CostModel:
    """
    Measurement costs.

    :param costs: Per-feature cost vector ``c``.
    :param lam: Trade-off ``lambda`` between loss and cost.
    :param eta: Multiplier applied when the label is ``adverse_label``.
    :param delays: Per-feature measurement delays ``tau`` in steps.
    :param adverse_label: Label value that triggers ``eta``.
    """

    costs: np.ndarray
    lam: float = 1.0
    eta: float = 1.0
    delays: np.ndarray | None = None
    adverse_label: float = 1.0

    def __post_init__(self):
        costs = np.array(self.costs, dtype=np.float64).reshape(-1)
        if np.any(costs < 0) or not np.all(np.isfinite(costs)):
            raise ValueError("Costs must be finite and non-negative.")
        if not self.lam >= 0 or math.isinf(self.lam):
            raise ValueError("'lam' must be finite and non-negative.")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("'eta' must lie in [0, 1].")
        if self.delays is None:
            delays = np.zeros(costs.shape, dtype=np.int64)
        else:
            delays = np.array(self.delays).reshape(-1)
            if delays.shape != costs.shape:
                raise ValueError(
                    f"{delays.shape[0]} delays given for "
                    f"{costs.shape[0]} features"
                )
            if np.any(delays < 0) or np.any(delays != np.round(delays)):
                raise ValueError("Delays must be non-negative integers.")
            delays = delays.astype(np.int64)
        object.__setattr__(self, "costs", _frozen(costs))
        object.__setattr__(self, "delays", _frozen(delays))

    @property
    def n_features(self) -> int:
        """
        Number of features d.
        """
        return self.costs.shape[0]

    def multiplier(self, labels) -> np.ndarray:
        """
        ``eta`` where the label is adverse, else 1.
        """
        labels = np.asarray(labels, dtype=np.float64)
        return np.where(labels == self.adverse_label, self.eta, 1.0)


@dataclass(frozen=True)
class SensingTrajectory:
    """
    Rollout record for a batch of ``B`` episodes of equal length ``T``.

    Decision arrays are ``(B, T, d)``. ``sampled`` holds the Bernoulli
    draws, ``decisions`` the measurement bits in force (the cumulative
    mask in static mode), ``charged`` the bits that were billed.
    ``steps`` is the per-step cost, already multiplied by lambda.
    """

    episode_ids: tuple[str, ...]
    features: np.ndarray
    labels: np.ndarray
    availability: np.ndarray
    probabilities: np.ndarray
    sampled: np.ndarray
    decisions: np.ndarray
    charged: np.ndarray
    observed_values: np.ndarray
    observed_mask: np.ndarray
    missing: np.ndarray
    predictions: np.ndarray
    losses: np.ndarray
    costs: np.ndarray
    mode: Mode = Mode.TIME_SERIES

    @property
    def n_episodes(self) -> int:
        """
        Batch size B.
        """
        return self.labels.shape[0]

    @property
    def length(self) -> int:
        """
        Episode length T shared by the batch.
        """
        return self.labels.shape[1]

    @property
    def total_loss(self) -> np.ndarray:
        """
        ``(B,)`` summed prediction loss.
        """
        return self.losses.sum(axis=1)

    @property
    def total_cost(self) -> np.ndarray:
        """
        ``(B,)`` summed lambda-weighted cost.
        """
        return self.costs.sum(axis=1)


@dataclass(frozen=True)
class TrainingConfig:
    """
    Hyper-parameters for joint training. The trade-off ``lambda`` lives
    on ``CostModel``.
    """

    selector_learning_rate: float = 1e-3
    predictor_learning_rate: float = 1e-3
    batch_size: int = 64
    iterations: int = 2000
    samples_per_decision: int = 1
    mode: Mode = Mode.TIME_SERIES
    baseline: Baseline = Baseline.NONE
    baseline_decay: float = 0.99
    seed: int = 0
    clip_norm: float = 5.0
    optimizer: str = "adam"
    log_every: int = 100
    checkpoint_every: int = 0
    checkpoint_dir: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "baseline", Baseline(self.baseline))
        if self.batch_size < 1:
            raise ValueError("'batch_size' must be at least 1.")
        if self.iterations < 1:
            raise ValueError("'iterations' must be at least 1.")
        if self.samples_per_decision < 1:
            raise ValueError("'samples_per_decision' must be at least 1.")
        if self.selector_learning_rate <= 0:
            raise ValueError("'selector_learning_rate' must be positive.")
        if self.predictor_learning_rate <= 0:
            raise ValueError("'predictor_learning_rate' must be positive.")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValueError("'baseline_decay' must lie in [0, 1).")


@dataclass
class TrainingHistory:
    """
    Per-iteration training curves.
    """

    predictor_loss: list[float] = field(default_factory=list)
    selector_objective: list[float] = field(default_factory=list)
    measurement_rate: list[float] = field(default_factory=list)

    def append(
        self, predictor_loss: float, objective: float, rate: float
    ) -> None:
        """

        :param predictor_loss: Mean per-step prediction loss.
        :param objective: Mean per-step loss plus weighted cost.
        :param rate: Mean measurement rate.
        :return:
        """
        self.predictor_loss.append(float(predictor_loss))
        self.selector_objective.append(float(objective))
        self.measurement_rate.append(float(rate))

    def __len__(self) -> int:
        return len(self.predictor_loss)

    def rows(self) -> list[tuple[int, float, float, float]]:
        """
        ``(iteration, predictor_loss, selector_objective,
        measurement_rate)`` rows, iterations counted from 1.
        """
        return [
            (i + 1, loss, objective, rate)
            for i, (loss, objective, rate) in enumerate(
                zip(
                    self.predictor_loss,
                    self.selector_objective,
                    self.measurement_rate,
                )
            )
        ]


class ReportDict(TypedDict, total=False):
    """
    A typed dictionary describing one experiment report.

    :param rates: Per-feature measurement rates, keyed by condition
    (``all``, ``y=0``, ``y=1``) and split (``test``/``train``).
    :param metrics: Metric name to value.
    :param costs: Mean per-episode cost totals.
    :param config: The configuration echo.
    :param seed: Seed of the run.
    :param wall_clock_seconds: Elapsed time.
    :param rates_std: Spread of ``rates`` across repeats.
    :param metrics_std: Spread of ``metrics`` across repeats.
    :param seeds: Seeds aggregated into this report.
    """

    rates: dict[str, dict[str, list[float]]]
    rates_std: dict[str, dict[str, list[float]]]
    metrics: dict[str, float]
    metrics_std: dict[str, float]
    seeds: list[int]
    costs: dict[str, float]
    config: dict[str, str]
    seed: int
    wall_clock_seconds: float
