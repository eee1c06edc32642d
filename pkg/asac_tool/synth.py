"""
Synthetic active-sensing datasets.

Features follow a per-feature AR(1) Gaussian process
``X_t = phi * X_{t-1} + (1 - phi) * Z_t`` with ``X_1 = Z_1 ~ N(0, I)``.
Labels come from one of three mechanisms: an exponential of the feature
sum, an exponential of a weighted sum of the first four features, or a
Bernoulli draw whose probability peaks when the feature sum is 2.
Noise parameters written ``N(0, v)`` are read as variances unless the
``std`` reading is selected.
"""

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from asac_tool.helpers.helpers_benchmark import benchmark
from asac_tool.helpers.helpers_logging import get_logger
from asac_tool.types import Episode

NOISE_READINGS = ("variance", "std")
LABEL_KINDS = ("exp-sum", "weighted", "binary-ydep")
WEIGHTED_COEFFICIENTS = (0.1, 0.2, 0.3, 0.4)
EXP_SUM_SCALE = 0.1
BINARY_SCALE = 0.1
BINARY_CENTER = 2.0
DEFAULT_LABEL_VARIANCE = 0.1
DEFAULT_EPISODES = 2000


def noise_std(value: float, reading: str = "variance") -> float:
    """
    Standard deviation for a ``N(0, value)`` parameter.
    """
    if reading not in NOISE_READINGS:
        raise ValueError(f"Unknown noise reading '{reading}'.")
    if value < 0:
        raise ValueError("Noise parameters must not be negative.")
    return float(np.sqrt(value)) if reading == "variance" else float(value)


@dataclass(frozen=True)
class ArProcessSpec:
    """
    AR(1) Gaussian feature process.

    :param phi: Per-feature autoregression in [0, 1].
    :param n_steps: Episode length T.
    :param n_episodes: Number of episodes N.
    :param seed: Generator seed.
    """

    phi: tuple[float, ...]
    n_steps: int = 10
    n_episodes: int = DEFAULT_EPISODES
    seed: int = 0

    def __post_init__(self):
        phi = tuple(float(p) for p in np.atleast_1d(self.phi))
        object.__setattr__(self, "phi", phi)
        if not phi or any(not 0.0 <= p <= 1.0 for p in phi):
            raise ValueError(f"'phi' entries must lie in [0, 1]: {phi}")
        if self.n_steps < 1 or self.n_episodes < 1:
            raise ValueError("'n_steps' and 'n_episodes' must be positive.")

    @property
    def n_features(self) -> int:
        return len(self.phi)


@dataclass(frozen=True)
class NoisySpec:
    """
    Cheap noisy copies ``X + delta`` with ``delta ~ N(0, gamma)``.
    """

    gamma: float
    cost: float

    def __post_init__(self):
        if self.gamma <= 0 or self.cost <= 0:
            raise ValueError("'gamma' and 'cost' must be positive.")


@dataclass(frozen=True)
class LabelSpec:
    """
    Label mechanism and the variance of its noise term.
    """

    kind: str = "exp-sum"
    variance: float = DEFAULT_LABEL_VARIANCE
    seed: int = 0
    noise_reading: str = "variance"

    def __post_init__(self):
        if self.kind not in LABEL_KINDS:
            raise ValueError(f"Unknown label kind '{self.kind}'.")
        if self.variance < 0:
            raise ValueError("'variance' must not be negative.")
        noise_std(self.variance, self.noise_reading)


def gen_ar_gaussian(spec: ArProcessSpec) -> np.ndarray:
    """
    Draw ``(N, T, d)`` features from the AR(1) process.
    """
    rng = np.random.default_rng(spec.seed)
    phi = np.asarray(spec.phi)
    shocks = rng.standard_normal(
        (spec.n_episodes, spec.n_steps, spec.n_features)
    )
    features = np.empty_like(shocks)
    features[:, 0] = shocks[:, 0]
    for t in range(1, spec.n_steps):
        features[:, t] = phi * features[:, t - 1] + (1.0 - phi) * shocks[:, t]
    return features


def _label_noise(shape, variance: float, seed: int, reading: str):
    if variance == 0:
        return np.zeros(shape)
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, noise_std(variance, reading), size=shape)


def label_exp_sum(
    features,
    variance: float = DEFAULT_LABEL_VARIANCE,
    *,
    seed: int = 0,
    noise_reading: str = "variance",
) -> np.ndarray:
    """
    ``Y_t = exp(-0.1 |sum_i X_t^i|) + eps``.
    """
    features = np.asarray(features, dtype=np.float64)
    noise = _label_noise(features.shape[:-1], variance, seed, noise_reading)
    return np.exp(-EXP_SUM_SCALE * np.abs(features.sum(axis=-1))) + noise


def label_weighted(
    features,
    variance: float = DEFAULT_LABEL_VARIANCE,
    *,
    seed: int = 0,
    noise_reading: str = "variance",
) -> np.ndarray:
    """
    ``Y_t = exp(-|0.1 X^1 + 0.2 X^2 + 0.3 X^3 + 0.4 X^4|) + eps``; the
    remaining features do not enter the label.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] < len(WEIGHTED_COEFFICIENTS):
        raise ValueError("The weighted label needs at least 4 features.")
    weights = np.zeros(features.shape[-1])
    weights[: len(WEIGHTED_COEFFICIENTS)] = WEIGHTED_COEFFICIENTS
    noise = _label_noise(features.shape[:-1], variance, seed, noise_reading)
    return np.exp(-np.abs(features @ weights)) + noise


def add_noisy_features(
    features, gamma: float, seed: int = 0, noise_reading: str = "variance"
) -> np.ndarray:
    """
    Append ``X + delta`` with ``delta ~ N(0, gamma)`` after ``X``.
    :return: ``(..., 2d)`` features, true columns first.
    """
    if gamma <= 0:
        raise ValueError("'gamma' must be positive.")
    features = np.asarray(features, dtype=np.float64)
    rng = np.random.default_rng(seed)
    delta = rng.normal(0.0, noise_std(gamma, noise_reading), features.shape)
    return np.concatenate([features, features + delta], axis=-1)


def binary_ydep_probability(features, eps=0.0) -> np.ndarray:
    """
    ``P(Y_t = 1) = exp(-0.1 |sum_i X_t^i + eps - 2|)``, clipped to [0, 1].
    """
    features = np.asarray(features, dtype=np.float64)
    shifted = features.sum(axis=-1) + eps - BINARY_CENTER
    return np.clip(np.exp(-BINARY_SCALE * np.abs(shifted)), 0.0, 1.0)


def label_binary_ydep(
    features,
    seed: int = 0,
    *,
    variance: float = DEFAULT_LABEL_VARIANCE,
    noise_reading: str = "variance",
) -> np.ndarray:
    """
    Binary labels drawn with ``binary_ydep_probability`` and
    ``eps ~ N(0, variance)`` per (episode, step).
    """
    features = np.asarray(features, dtype=np.float64)
    rng = np.random.default_rng(seed)
    shape = features.shape[:-1]
    eps = (
        rng.normal(0.0, noise_std(variance, noise_reading), shape)
        if variance > 0
        else np.zeros(shape)
    )
    probability = binary_ydep_probability(features, eps)
    return (rng.random(shape) < probability).astype(np.float64)


def inject_missingness(
    episodes: Sequence[Episode], rate: float, seed: int = 0
) -> list[Episode]:
    """
    Mark each feature cell unavailable with probability ``rate``.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError("'rate' must lie in [0, 1).")
    rng = np.random.default_rng(seed)
    result = []
    for episode in episodes:
        keep = rng.random(episode.features.shape) >= rate
        result.append(
            Episode(
                episode.features,
                episode.labels,
                episode.availability * keep,
                episode.episode_id,
            )
        )
    return result


@dataclass(frozen=True)
class SyntheticSpec:
    """
    Everything needed to generate one synthetic dataset.

    :param label: One of ``LABEL_KINDS``.
    :param phi: Autoregression, one value or one per true feature.
    :param n_features: Number of true features.
    :param gamma: Noise of the cheap copies; None adds no copies.
    :param static: Hold every episode's features constant over time.
    :param missing_rate: Fraction of feature cells marked missing.
    """

    label: str = "exp-sum"
    phi: tuple[float, ...] = (0.0,)
    n_features: int = 10
    n_steps: int = 10
    n_episodes: int = DEFAULT_EPISODES
    gamma: float | None = None
    label_variance: float = DEFAULT_LABEL_VARIANCE
    noise_reading: str = "variance"
    missing_rate: float = 0.0
    static: bool = False
    seed: int = 0

    def __post_init__(self):
        phi = tuple(float(p) for p in np.atleast_1d(self.phi))
        if len(phi) == 1:
            phi = phi * self.n_features
        if len(phi) != self.n_features:
            raise ValueError(
                f"{len(phi)} phi values given for {self.n_features} features"
            )
        object.__setattr__(self, "phi", phi)
        LabelSpec(self.label, self.label_variance, 0, self.noise_reading)
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("'gamma' must be positive.")

    @property
    def total_features(self) -> int:
        """
        Width of the generated episodes (doubled by noisy copies).
        """
        return self.n_features * (1 if self.gamma is None else 2)


def _derived_seeds(seed: int, count: int) -> list[int]:
    sequence = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in sequence.spawn(count)]


@benchmark
def generate_dataset(
    spec: SyntheticSpec, *, logger: logging.Logger | None = None
) -> list[Episode]:
    """
    Generate episodes for ``spec``.
    :param spec: The dataset description.
    :param logger: The logger instance.
    :return: Episodes with ids ``"1".."N"``.
    """
    logger = get_logger() if logger is None else logger
    feature_seed, label_seed, noise_seed, missing_seed = _derived_seeds(
        spec.seed, 4
    )
    features = gen_ar_gaussian(
        ArProcessSpec(spec.phi, spec.n_steps, spec.n_episodes, feature_seed)
    )
    if spec.static:
        features = np.repeat(features[:, :1], spec.n_steps, axis=1)

    if spec.label == "exp-sum":
        labels = label_exp_sum(
            features,
            spec.label_variance,
            seed=label_seed,
            noise_reading=spec.noise_reading,
        )
    elif spec.label == "weighted":
        labels = label_weighted(
            features,
            spec.label_variance,
            seed=label_seed,
            noise_reading=spec.noise_reading,
        )
    else:
        labels = label_binary_ydep(
            features,
            label_seed,
            variance=spec.label_variance,
            noise_reading=spec.noise_reading,
        )

    if spec.gamma is not None:
        features = add_noisy_features(
            features, spec.gamma, noise_seed, spec.noise_reading
        )

    episodes = [
        Episode(features[i], labels[i], episode_id=str(i + 1))
        for i in range(spec.n_episodes)
    ]
    if spec.missing_rate > 0:
        episodes = inject_missingness(
            episodes, spec.missing_rate, missing_seed
        )
    logger.info(
        "Generated %d '%s' episodes (T=%d, d=%d)",
        len(episodes),
        spec.label,
        spec.n_steps,
        spec.total_features,
    )
    return episodes
