"""
Experiment orchestration: configuration, CSV ingest and export,
evaluation metrics, experiment runs and the synthetic table presets.
"""

import json
import logging
import math
import os
import time
from concurrent.futures import (
    BrokenExecutor,
    ProcessPoolExecutor,
    as_completed,
)
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from asac_tool import DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV_VAR
from asac_tool.errors import ConfigError, IngestError, MetricError
from asac_tool.helpers.helpers_benchmark import benchmark
from asac_tool.helpers.helpers_config import format_config
from asac_tool.helpers.helpers_files import (
    format_float,
    prepare_output_dir,
    write_csv,
    write_json,
)
from asac_tool.helpers.helpers_logging import get_logger, logger_settings
from asac_tool.seqmodel import (
    INIT_SCHEMES,
    PredictorModel,
    SelectorModel,
    load_model,
    save_model,
)
from asac_tool.synth import LABEL_KINDS, NOISE_READINGS, NoisySpec
from asac_tool.synth import SyntheticSpec, generate_dataset
from asac_tool.training import (
    DECISION_RULES,
    NetworkSpec,
    joint_train,
    rollout_dataset,
)
from asac_tool.types import (
    CostModel,
    Episode,
    Mode,
    ReportDict,
    SensingTrajectory,
    Task,
    TrainingConfig,
    TrainingHistory,
)

CSV_KEY_COLUMNS = ("episode_id", "t", "y")
METRICS = {
    "rmse": Task.REGRESSION,
    "auroc": Task.CLASSIFICATION,
    "auprc": Task.CLASSIFICATION,
}
DEFAULT_METRICS = {
    Task.REGRESSION: ("rmse",),
    Task.CLASSIFICATION: ("auroc", "auprc"),
}
REPORT_FORMATS = ("json", "csv")
RATE_SPLITS = ("test", "train", "both")

CONFIG_DEFAULTS: dict[str, str] = {
    "seed": "0",
    "repeats": "1",
    "workers": "1",
    "mode": str(Mode.TIME_SERIES),
    "data.source": "synthetic",
    "data.path": "",
    "data.task": str(Task.REGRESSION),
    "data.classes": "2",
    "synth.label": "exp-sum",
    "synth.phi": "0",
    "synth.features": "10",
    "synth.steps": "10",
    "synth.episodes": "2000",
    "synth.gamma": "",
    "synth.label_variance": "0.1",
    "synth.noise_reading": "variance",
    "synth.missing_rate": "0",
    "synth.static": "false",
    "cost.values": "1",
    "cost.noisy": "",
    "cost.lambda": "1",
    "cost.eta": "1",
    "cost.delays": "0",
    "model.hidden_size": "32",
    "model.head_layers": "",
    "model.init": "uniform-scaled",
    "training.selector_learning_rate": "0.001",
    "training.predictor_learning_rate": "0.001",
    "training.batch_size": "64",
    "training.iterations": "2000",
    "training.samples_per_decision": "1",
    "training.baseline": "none",
    "training.baseline_decay": "0.99",
    "training.clip_norm": "5.0",
    "training.optimizer": "adam",
    "training.log_every": "100",
    "training.checkpoint_every": "0",
    "evaluation.rule": "sample",
    "evaluation.rates_on": "test",
    "evaluation.test_fraction": "0.2",
    "metrics": "",
    "output.dir": "",
    "output.formats": "json,csv",
}
CONFIG_ALIASES = {
    "training.lambda": "cost.lambda",
    "training.mode": "mode",
    "training.seed": "seed",
}


def default_output_dir() -> str:
    """
    Output directory from $ASAC_TOOL_OUTPUT_DIR, else ./output.
    """
    return os.environ.get(OUTPUT_DIR_ENV_VAR) or DEFAULT_OUTPUT_DIR


@dataclass(frozen=True)
class ExperimentConfig:
    """
    One fully resolved experiment.

    Exactly one data source is set: ``synthetic`` or ``csv_path``.
    ``values`` is the flat key-value echo the config was built from.
    """

    synthetic: SyntheticSpec | None
    csv_path: str | None
    task: Task
    n_classes: int
    mode: Mode
    costs: tuple[float, ...]
    noisy_cost: float | None
    lam: float
    eta: float
    delays: tuple[int, ...]
    network: NetworkSpec
    training: TrainingConfig
    metrics: tuple[str, ...]
    output_dir: str
    formats: tuple[str, ...] = REPORT_FORMATS
    evaluation_rule: str = "sample"
    rates_on: str = "test"
    test_fraction: float = 0.2
    seed: int = 0
    repeats: int = 1
    workers: int = 1
    values: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if (self.synthetic is None) == (self.csv_path is None):
            raise ConfigError("Exactly one data source must be configured.")

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """
        Copy of the config reseeded for data, training and evaluation.
        """
        synthetic = (
            None
            if self.synthetic is None
            else replace(self.synthetic, seed=seed)
        )
        return replace(
            self,
            seed=seed,
            synthetic=synthetic,
            training=replace(self.training, seed=seed),
            values={**self.values, "seed": str(seed)},
        )

    def with_output_dir(self, output_dir: str) -> "ExperimentConfig":
        return replace(
            self,
            output_dir=output_dir,
            values={**self.values, "output.dir": output_dir},
        )

    def cost_model(self, n_features: int) -> CostModel:
        """
        Expand the configured costs and delays to ``n_features``.
        Scalar costs apply to every true feature; noisy copies use
        ``cost.noisy`` when it is set.
        """
        n_true = n_features
        if self.synthetic is not None and self.synthetic.gamma is not None:
            n_true = self.synthetic.n_features
        costs = list(self.costs)
        if len(costs) == 1:
            costs = costs * n_true
        if len(costs) == n_true and n_true < n_features:
            noisy = costs[0] if self.noisy_cost is None else self.noisy_cost
            try:
                copies = NoisySpec(self.synthetic.gamma, noisy)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            costs = costs + [copies.cost] * (n_features - n_true)
        if len(costs) != n_features:
            raise ConfigError(
                f"'cost.values' has {len(self.costs)} entries for "
                f"{n_features} features"
            )
        delays = list(self.delays)
        if len(delays) == 1:
            delays = delays * n_features
        if len(delays) != n_features:
            raise ConfigError(
                f"'cost.delays' has {len(delays)} entries for "
                f"{n_features} features"
            )
        try:
            return CostModel(costs, self.lam, self.eta, delays)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def _text(values: Mapping[str, str], key: str) -> str:
    return values[key].strip()


def _convert(values: Mapping[str, str], key: str, parse: Callable):
    try:
        return parse(_text(values, key))
    except (TypeError, ValueError) as exc:
        raise ConfigError(
            f"'{key}' has an invalid value '{values[key]}': {exc}"
        ) from exc


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(part) for part in text.split(",") if part.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(part) for part in text.split(",") if part.strip())


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _choice(values: Mapping[str, str], key: str, choices: Iterable[str]):
    choices = tuple(choices)
    value = _text(values, key)
    if value not in choices:
        raise ConfigError(
            f"'{key}' must be one of {', '.join(choices)}, got '{value}'"
        )
    return value


def _optional_float(text: str) -> float | None:
    return float(text) if text else None


def resolve_config_values(values: Mapping[str, str]) -> dict[str, str]:
    """
    Apply aliases, reject unknown keys and fill in defaults.
    """
    resolved: dict[str, str] = {}
    for key, value in values.items():
        key = CONFIG_ALIASES.get(key, key)
        if key not in CONFIG_DEFAULTS:
            raise ConfigError(f"Unknown configuration key '{key}'.")
        resolved[key] = str(value)
    return {**CONFIG_DEFAULTS, **resolved}


def build_experiment_config(values: Mapping[str, str]) -> ExperimentConfig:
    """
    Convert a flat key-value mapping into an ``ExperimentConfig``.
    :param values: Keys from ``CONFIG_DEFAULTS`` (or their aliases).
    :return: The validated configuration.
    """
    values = resolve_config_values(values)
    if not _text(values, "output.dir"):
        values["output.dir"] = default_output_dir()
    source = _choice(values, "data.source", ("synthetic", "csv"))
    mode = Mode(_choice(values, "mode", [str(m) for m in Mode]))
    seed = _convert(values, "seed", int)

    synthetic, csv_path = None, None
    if source == "synthetic":
        label = _choice(values, "synth.label", LABEL_KINDS)
        task = (
            Task.CLASSIFICATION
            if label == "binary-ydep"
            else Task.REGRESSION
        )
        try:
            synthetic = SyntheticSpec(
                label=label,
                phi=_convert(values, "synth.phi", _floats),
                n_features=_convert(values, "synth.features", int),
                n_steps=_convert(values, "synth.steps", int),
                n_episodes=_convert(values, "synth.episodes", int),
                gamma=_convert(values, "synth.gamma", _optional_float),
                label_variance=_convert(values, "synth.label_variance", float),
                noise_reading=_choice(
                    values, "synth.noise_reading", NOISE_READINGS
                ),
                missing_rate=_convert(values, "synth.missing_rate", float),
                static=_convert(values, "synth.static", _bool),
                seed=seed,
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"Invalid synthetic dataset: {exc}") from exc
        n_classes = 2
    else:
        csv_path = _text(values, "data.path")
        if not csv_path:
            raise ConfigError("'data.path' is required for CSV data.")
        task = Task(_choice(values, "data.task", [str(t) for t in Task]))
        n_classes = _convert(values, "data.classes", int)
        if n_classes < 2:
            raise ConfigError("'data.classes' must be at least 2.")

    metrics = _convert(
        values,
        "metrics",
        lambda text: tuple(p.strip() for p in text.split(",") if p.strip()),
    ) or DEFAULT_METRICS[task]
    for name in metrics:
        if METRICS.get(name) is not task:
            raise ConfigError(f"Metric '{name}' does not apply to {task}.")

    formats = tuple(
        p.strip()
        for p in _text(values, "output.formats").split(",")
        if p.strip()
    )
    if not formats or any(f not in REPORT_FORMATS for f in formats):
        raise ConfigError(
            f"'output.formats' must list {', '.join(REPORT_FORMATS)}"
        )
    test_fraction = _convert(values, "evaluation.test_fraction", float)
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError("'evaluation.test_fraction' must lie in (0, 1).")
    repeats = _convert(values, "repeats", int)
    workers = _convert(values, "workers", int)
    if repeats < 1 or workers < 1:
        raise ConfigError("'repeats' and 'workers' must be at least 1.")

    try:
        network = NetworkSpec(
            task=task,
            n_classes=n_classes,
            hidden_size=_convert(values, "model.hidden_size", int),
            head_layers=_convert(values, "model.head_layers", _ints),
            init_scheme=_choice(values, "model.init", INIT_SCHEMES),
        )
        training = TrainingConfig(
            selector_learning_rate=_convert(
                values, "training.selector_learning_rate", float
            ),
            predictor_learning_rate=_convert(
                values, "training.predictor_learning_rate", float
            ),
            batch_size=_convert(values, "training.batch_size", int),
            iterations=_convert(values, "training.iterations", int),
            samples_per_decision=_convert(
                values, "training.samples_per_decision", int
            ),
            mode=mode,
            baseline=_text(values, "training.baseline"),
            baseline_decay=_convert(values, "training.baseline_decay", float),
            seed=seed,
            clip_norm=_convert(values, "training.clip_norm", float),
            optimizer=_choice(values, "training.optimizer", ("adam", "sgd")),
            log_every=_convert(values, "training.log_every", int),
            checkpoint_every=_convert(
                values, "training.checkpoint_every", int
            ),
        )
        config = ExperimentConfig(
            synthetic=synthetic,
            csv_path=csv_path,
            task=task,
            n_classes=n_classes,
            mode=mode,
            costs=_convert(values, "cost.values", _floats),
            noisy_cost=_convert(values, "cost.noisy", _optional_float),
            lam=_convert(values, "cost.lambda", float),
            eta=_convert(values, "cost.eta", float),
            delays=_convert(values, "cost.delays", _ints),
            network=network,
            training=training,
            metrics=metrics,
            output_dir=values["output.dir"],
            formats=formats,
            evaluation_rule=_choice(values, "evaluation.rule", DECISION_RULES),
            rates_on=_choice(values, "evaluation.rates_on", RATE_SPLITS),
            test_fraction=test_fraction,
            seed=seed,
            repeats=repeats,
            workers=workers,
            values=dict(sorted(values.items())),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if not config.costs:
        raise ConfigError("'cost.values' must not be empty.")
    if mode is Mode.STATIC and any(config.delays):
        raise ConfigError("Measurement delays need the time-series mode.")
    # Validates lambda, eta and costs before any data is touched.
    if synthetic is not None:
        config.cost_model(synthetic.total_features)
    return config


@dataclass(frozen=True)
class CsvSchema:
    """
    Optional expectations checked while ingesting a CSV file.

    :param n_features: Required feature count; None accepts any.
    :param task: Classification labels must be class indices.
    :param n_classes: Number of classes for classification.
    """

    n_features: int | None = None
    task: Task = Task.REGRESSION
    n_classes: int = 2


def feature_names(n_features: int) -> list[str]:
    """
    Column names ``x1..xd``.
    """
    return [f"x{i}" for i in range(1, n_features + 1)]


def _feature_columns(
    path: str, columns: list[str], schema: CsvSchema
) -> list[str]:
    if tuple(columns[:3]) != CSV_KEY_COLUMNS:
        raise IngestError(
            f"'{path}' must start with columns "
            f"{','.join(CSV_KEY_COLUMNS)}, got {','.join(columns[:3])}"
        )
    features = columns[3:]
    if not features or features != feature_names(len(features)):
        raise IngestError(
            f"'{path}' feature columns must be x1..xd in order, got "
            f"{','.join(features) or 'none'}"
        )
    if schema.n_features is not None and len(features) != schema.n_features:
        raise IngestError(
            f"'{path}' has {len(features)} features, expected "
            f"{schema.n_features}"
        )
    return features


def _numeric_column(
    path: str, frame: pd.DataFrame, column: str, *, allow_blank: bool
) -> tuple[np.ndarray, np.ndarray]:
    text = frame[column].str.strip()
    blank = (text == "").to_numpy()
    numbers = pd.to_numeric(text.where(~blank), errors="coerce").to_numpy(
        dtype=np.float64
    )
    bad = ~np.isfinite(numbers)
    if allow_blank:
        bad &= ~blank
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise IngestError(
            f"{path}:{row + 2}: column '{column}' holds "
            f"'{frame[column].iloc[row]}', not a finite number"
        )
    return np.where(blank, 0.0, numbers), blank


@benchmark
def ingest_csv(
    path: str,
    schema: CsvSchema | None = None,
    *,
    logger: logging.Logger | None = None,
) -> list[Episode]:
    """
    Read episodes from ``episode_id,t,y,x1..xd`` rows.

    A blank feature cell marks the value as missing. Episodes keep the
    order in which their ids first appear; rows are sorted by ``t``,
    which must run 1, 2, ... without gaps.

    :param path: Path to a UTF-8 CSV file.
    :param schema: Optional expectations on width and labels.
    :param logger: The logger instance.
    :return: The episodes.
    """
    logger = get_logger() if logger is None else logger
    schema = CsvSchema() if schema is None else schema
    if not path:
        raise ValueError("The CSV path is invalid or null.")
    if not os.path.isfile(path):
        raise FileNotFoundError(f"CSV file '{path}' does not exist.")

    try:
        frame = pd.read_csv(
            path, dtype=str, keep_default_na=False, encoding="utf-8"
        )
    except pd.errors.EmptyDataError as exc:
        raise IngestError(f"'{path}' is empty.") from exc
    except pd.errors.ParserError as exc:
        raise IngestError(f"Ragged row in '{path}': {exc}") from exc
    except UnicodeDecodeError as exc:
        raise IngestError(f"'{path}' is not valid UTF-8: {exc}") from exc

    columns = _feature_columns(path, list(frame.columns), schema)
    if frame.empty:
        raise IngestError(f"'{path}' holds no rows.")
    short = frame.isna().any(axis=1).to_numpy()
    if short.any():
        line = int(np.flatnonzero(short)[0]) + 2
        raise IngestError(
            f"{path}:{line}: ragged row, expected {frame.shape[1]} columns"
        )

    ids = frame["episode_id"].str.strip()
    if (ids == "").any():
        line = int(np.flatnonzero((ids == "").to_numpy())[0]) + 2
        raise IngestError(f"{path}:{line}: empty episode_id")
    steps, _ = _numeric_column(path, frame, "t", allow_blank=False)
    if np.any(steps != np.round(steps)):
        line = int(np.flatnonzero(steps != np.round(steps))[0]) + 2
        raise IngestError(f"{path}:{line}: 't' must be an integer")
    labels, _ = _numeric_column(path, frame, "y", allow_blank=False)
    if schema.task is Task.CLASSIFICATION:
        invalid = (labels != np.round(labels)) | (labels < 0)
        invalid |= labels >= schema.n_classes
        if invalid.any():
            line = int(np.flatnonzero(invalid)[0]) + 2
            raise IngestError(
                f"{path}:{line}: label must be a class index below "
                f"{schema.n_classes}"
            )
    features = np.empty((len(frame), len(columns)))
    missing = np.empty((len(frame), len(columns)), dtype=bool)
    for index, column in enumerate(columns):
        features[:, index], missing[:, index] = _numeric_column(
            path, frame, column, allow_blank=True
        )

    episodes = []
    for episode_id, group in frame.groupby(ids, sort=False):
        rows = group.index.to_numpy()
        rows = rows[np.argsort(steps[rows], kind="stable")]
        if not np.array_equal(steps[rows], np.arange(1, len(rows) + 1)):
            raise IngestError(
                f"Episode '{episode_id}' in '{path}' has steps "
                f"{steps[rows].astype(int).tolist()}; expected "
                "consecutive integers from 1"
            )
        episodes.append(
            Episode(
                features[rows],
                labels[rows],
                (~missing[rows]).astype(np.float64),
                str(episode_id),
            )
        )
    logger.info(
        "Ingested %d episodes (d=%d, %.1f%% missing) from '%s'",
        len(episodes),
        len(columns),
        100.0 * missing.mean(),
        path,
    )
    return episodes


def export_csv(
    episodes: Sequence[Episode],
    path: str,
    *,
    logger: logging.Logger | None = None,
) -> None:
    """
    Write episodes in the ``ingest_csv`` format; missing values become
    blank cells.
    """
    logger = get_logger() if logger is None else logger
    episodes = list(episodes)
    if not episodes:
        raise ValueError("'episodes' must not be empty.")
    n_features = episodes[0].n_features
    if any(e.n_features != n_features for e in episodes):
        raise ValueError("Episodes have different feature counts.")
    rows = []
    for episode in episodes:
        for t in range(episode.length):
            cells = [
                format_float(value) if present > 0 else ""
                for value, present in zip(
                    episode.features[t], episode.availability[t]
                )
            ]
            rows.append(
                [
                    episode.episode_id,
                    str(t + 1),
                    format_float(episode.labels[t]),
                    *cells,
                ]
            )
    header = [*CSV_KEY_COLUMNS, *feature_names(n_features)]
    write_csv(path, header, rows, logger)


def label_equals(value: float) -> Callable[[np.ndarray], np.ndarray]:
    """
    Predicate selecting steps whose label equals ``value``.
    """

    def predicate(labels: np.ndarray) -> np.ndarray:
        return np.asarray(labels) == value

    return predicate


def _require(trajectories) -> list[SensingTrajectory]:
    trajectories = list(trajectories)
    if not trajectories:
        raise ValueError("'trajectories' must not be empty.")
    return trajectories


def measurement_rates(
    trajectories: Iterable[SensingTrajectory],
    condition: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """
    Per-feature fraction of (episode, step) cells measured.
    :param trajectories: Rollout records.
    :param condition: Optional predicate on the step labels.
    :return: ``(d,)`` rates in [0, 1].
    """
    trajectories = _require(trajectories)
    decisions = np.concatenate(
        [t.decisions.reshape(-1, t.decisions.shape[-1]) for t in trajectories]
    )
    if condition is not None:
        labels = np.concatenate([t.labels.reshape(-1) for t in trajectories])
        decisions = decisions[np.asarray(condition(labels), dtype=bool)]
    if decisions.shape[0] == 0:
        raise MetricError("No (episode, step) cells satisfy the condition.")
    return decisions.mean(axis=0)


def rmse(labels, predictions) -> float:
    """
    Root mean squared error.
    """
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
    if labels.size == 0 or labels.shape != predictions.shape:
        raise MetricError("RMSE needs matching non-empty inputs.")
    return float(np.sqrt(np.mean((labels - predictions) ** 2)))


def _binary(labels) -> tuple[np.ndarray, int, int]:
    positive = np.asarray(labels, dtype=np.float64).reshape(-1) == 1.0
    n_positive = int(positive.sum())
    n_negative = positive.size - n_positive
    if n_positive == 0 or n_negative == 0:
        raise MetricError("The labels hold a single class.")
    return positive, n_positive, n_negative


def auroc(labels, scores) -> float:
    """
    Area under the ROC curve from average ranks (ties count half).
    """
    positive, n_positive, n_negative = _binary(labels)
    ranks = rankdata(np.asarray(scores, dtype=np.float64).reshape(-1))
    rank_sum = ranks[positive].sum()
    return float(
        (rank_sum - n_positive * (n_positive + 1) / 2.0)
        / (n_positive * n_negative)
    )


def auprc(labels, scores) -> float:
    """
    Average precision: precision at each distinct score threshold,
    weighted by the recall gained there.
    """
    positive, n_positive, _ = _binary(labels)
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    order = np.argsort(-scores, kind="mergesort")
    sorted_scores, hits = scores[order], positive[order]
    last_of_tie = np.r_[np.flatnonzero(np.diff(sorted_scores)), hits.size - 1]
    true_positives = np.cumsum(hits)[last_of_tie]
    precision = true_positives / (last_of_tie + 1.0)
    recall = true_positives / n_positive
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def _pooled(trajectories: list[SensingTrajectory]):
    labels = np.concatenate([t.labels.reshape(-1) for t in trajectories])
    predictions = np.concatenate(
        [
            t.predictions.reshape(-1, t.predictions.shape[-1])
            for t in trajectories
        ]
    )
    return labels, predictions


def _one_vs_rest(metric: Callable, labels, probabilities) -> float:
    if probabilities.shape[1] == 2:
        return metric(labels, probabilities[:, 1])
    return float(
        np.mean(
            [
                metric((labels == k).astype(np.float64), probabilities[:, k])
                for k in range(probabilities.shape[1])
            ]
        )
    )


def compute_metrics(
    trajectories: Iterable[SensingTrajectory],
    task: Task | str,
    metrics: Sequence[str] | None = None,
) -> dict[str, float]:
    """
    Pool predictions over every (episode, step) and score them.

    :param trajectories: Rollout records.
    :param task: Regression or classification.
    :param metrics: Names from ``METRICS``; defaults by task.
    :return: Metric name to value, exactly the requested ones.
    """
    trajectories = _require(trajectories)
    task = Task(task)
    metrics = DEFAULT_METRICS[task] if metrics is None else tuple(metrics)
    labels, predictions = _pooled(trajectories)
    result = {}
    for name in metrics:
        if METRICS.get(name) is not task:
            raise MetricError(f"Metric '{name}' does not apply to {task}.")
        if name == "rmse":
            result[name] = rmse(labels, predictions[:, 0])
        elif name == "auroc":
            result[name] = _one_vs_rest(auroc, labels, predictions)
        else:
            result[name] = _one_vs_rest(auprc, labels, predictions)
    return result


def rate_conditions(
    config: ExperimentConfig,
) -> dict[str, Callable | None]:
    """
    Label conditions under which rates are reported.
    """
    conditions: dict[str, Callable | None] = {"all": None}
    if config.task is Task.CLASSIFICATION:
        for k in range(config.n_classes):
            conditions[f"y={k}"] = label_equals(float(k))
    return conditions


def summarize_rates(
    trajectories: Sequence[SensingTrajectory], config: ExperimentConfig
) -> dict[str, list[float]]:
    """
    Rates per condition; conditions no step satisfies are left out.
    """
    rates = {}
    for name, condition in rate_conditions(config).items():
        try:
            rates[name] = measurement_rates(trajectories, condition).tolist()
        except MetricError:
            continue
    return rates


def cost_totals(
    trajectories: Sequence[SensingTrajectory], cost_model: CostModel
) -> dict[str, float]:
    """
    Mean per-episode measurement cost ``sum_t c . s_t`` (lambda-free),
    the mean weighted cost and the average measurement rate.
    """
    raw = np.concatenate(
        [
            np.sum(t.charged * cost_model.costs, axis=(1, 2))
            for t in trajectories
        ]
    )
    weighted = np.concatenate([t.total_cost for t in trajectories])
    decisions = np.concatenate([t.decisions.ravel() for t in trajectories])
    return {
        "mean_episode_cost": float(raw.mean()),
        "mean_weighted_cost": float(weighted.mean()),
        "mean_measurement_rate": float(decisions.mean()),
    }


def split_episodes(
    episodes: Sequence[Episode], test_fraction: float, seed: int
) -> tuple[list[Episode], list[Episode]]:
    """
    Disjoint and exhaustive random train/test split.
    """
    episodes = list(episodes)
    if len(episodes) < 2:
        raise ValueError("At least two episodes are needed for a split.")
    n_test = round(len(episodes) * test_fraction)
    n_test = min(len(episodes) - 1, max(1, n_test))
    order = np.random.default_rng((seed, 2)).permutation(len(episodes))
    test = sorted(order[:n_test])
    train = sorted(order[n_test:])
    return [episodes[i] for i in train], [episodes[i] for i in test]


def load_episodes(
    config: ExperimentConfig, logger: logging.Logger
) -> list[Episode]:
    """
    Generate or ingest the configured dataset.
    """
    if config.synthetic is not None:
        return generate_dataset(config.synthetic, logger=logger)
    if not os.path.isfile(config.csv_path):
        raise ConfigError(f"Data file '{config.csv_path}' does not exist.")
    return ingest_csv(
        config.csv_path,
        CsvSchema(task=config.task, n_classes=config.n_classes),
        logger=logger,
    )


def prepare_data(
    config: ExperimentConfig, logger: logging.Logger
) -> tuple[list[Episode], list[Episode], CostModel]:
    """
    Dataset split into train/test plus the expanded cost model.
    """
    episodes = load_episodes(config, logger)
    train, test = split_episodes(episodes, config.test_fraction, config.seed)
    logger.info(
        "Split %d episodes into %d train and %d test",
        len(episodes),
        len(train),
        len(test),
    )
    return train, test, config.cost_model(episodes[0].n_features)


def _history_rows(history: TrainingHistory) -> list[list]:
    return [list(row) for row in history.rows()]


def train_models(
    config: ExperimentConfig,
    *,
    logger: logging.Logger | None = None,
) -> tuple[SelectorModel, PredictorModel, TrainingHistory]:
    """
    Train on the configured training split and save
    ``selector.json``, ``predictor.json`` and ``history.csv``.
    """
    logger = get_logger() if logger is None else logger
    prepare_output_dir(config.output_dir, logger, warn_existing=True)
    train, _, cost_model = prepare_data(config, logger)
    return _train_and_save(config, train, cost_model, logger)


def _train_and_save(config, train, cost_model, logger):
    output_dir = prepare_output_dir(config.output_dir, logger)
    training = config.training
    if training.checkpoint_every:
        training = replace(training, checkpoint_dir=output_dir)
    selector, predictor, history = joint_train(
        train, config.network, cost_model, training, logger=logger
    )
    save_model(os.path.join(output_dir, "selector.json"), selector)
    save_model(os.path.join(output_dir, "predictor.json"), predictor)
    if "csv" in config.formats:
        write_csv(
            os.path.join(output_dir, "history.csv"),
            [
                "iteration",
                "predictor_loss",
                "selector_objective",
                "measurement_rate",
            ],
            _history_rows(history),
            logger,
        )
    return selector, predictor, history


def evaluate_models(
    selector: SelectorModel,
    predictor: PredictorModel,
    config: ExperimentConfig,
    train: Sequence[Episode],
    test: Sequence[Episode],
    cost_model: CostModel,
) -> ReportDict:
    """
    Roll the trained pair out on the held-out (and optionally training)
    episodes and build the report body.
    """
    rng = np.random.default_rng((config.seed, 1))
    splits = {"test": test, "train": train}
    wanted = ("test", "train") if config.rates_on == "both" else (
        config.rates_on,
    )
    trajectories = {
        name: rollout_dataset(
            selector,
            predictor,
            splits[name],
            cost_model,
            config.mode,
            rng,
            rule=config.evaluation_rule,
        )
        for name in dict.fromkeys(("test", *wanted))
    }
    return {
        "rates": {
            name: summarize_rates(trajectories[name], config)
            for name in wanted
        },
        "metrics": compute_metrics(
            trajectories["test"], config.task, config.metrics
        ),
        "costs": cost_totals(trajectories["test"], cost_model),
        "config": dict(config.values),
        "seed": config.seed,
    }


def rates_table(report: ReportDict) -> tuple[list[str], list[list]]:
    """
    Feature by (split, condition) grid of measurement rates.
    """
    columns = [
        (split, condition)
        for split, by_condition in report["rates"].items()
        for condition in by_condition
    ]
    n_features = len(report["rates"][columns[0][0]][columns[0][1]])
    header = ["feature", *(f"{s}:{c}" for s, c in columns)]
    rows = [
        [name, *(float(report["rates"][s][c][i]) for s, c in columns)]
        for i, name in enumerate(feature_names(n_features))
    ]
    return header, rows


def write_report(
    report: ReportDict,
    config: ExperimentConfig,
    output_dir: str,
    logger: logging.Logger,
) -> None:
    """
    Write ``report.json`` and ``rates.csv`` as configured.
    """
    output_dir = prepare_output_dir(output_dir, logger)
    if "json" in config.formats:
        write_json(os.path.join(output_dir, "report.json"), report, logger)
    if "csv" in config.formats:
        header, rows = rates_table(report)
        write_csv(os.path.join(output_dir, "rates.csv"), header, rows, logger)


def evaluate_checkpoints(
    config: ExperimentConfig,
    checkpoint_dir: str,
    *,
    logger: logging.Logger | None = None,
) -> ReportDict:
    """
    Reload ``selector.json`` and ``predictor.json`` and evaluate them on
    the configured split.
    """
    logger = get_logger() if logger is None else logger
    prepare_output_dir(config.output_dir, logger, warn_existing=True)
    start = time.perf_counter()
    selector = load_model(os.path.join(checkpoint_dir, "selector.json"))
    predictor = load_model(os.path.join(checkpoint_dir, "predictor.json"))
    if not isinstance(selector, SelectorModel) or not isinstance(
        predictor, PredictorModel
    ):
        raise ConfigError(
            f"'{checkpoint_dir}' does not hold a selector and a predictor."
        )
    train, test, cost_model = prepare_data(config, logger)
    report = evaluate_models(
        selector, predictor, config, train, test, cost_model
    )
    report["wall_clock_seconds"] = time.perf_counter() - start
    write_report(report, config, config.output_dir, logger)
    return report


def _run_single(
    config: ExperimentConfig, logger: logging.Logger | None = None
) -> ReportDict:
    logger = get_logger() if logger is None else logger
    start = time.perf_counter()
    try:
        train, test, cost_model = prepare_data(config, logger)
        selector, predictor, _ = _train_and_save(
            config, train, cost_model, logger
        )
        report = evaluate_models(
            selector, predictor, config, train, test, cost_model
        )
    except Exception:
        logger.error(
            "Experiment with seed %d failed; configuration:\n%s",
            config.seed,
            format_config(dict(config.values)),
        )
        raise
    report["wall_clock_seconds"] = time.perf_counter() - start
    write_report(report, config, config.output_dir, logger)
    logger.info(
        "Seed %d: metrics %s, mean measurement rate %.3f",
        config.seed,
        report["metrics"],
        report["costs"]["mean_measurement_rate"],
    )
    return report


def _mean_and_std(values: list) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.asarray(values, dtype=np.float64)
    ddof = 1 if stacked.shape[0] > 1 else 0
    return stacked.mean(axis=0), stacked.std(axis=0, ddof=ddof)


def aggregate_reports(
    reports: Sequence[ReportDict], config: ExperimentConfig
) -> ReportDict:
    """
    Mean and standard deviation of rates, metrics and costs across
    repeats; rate conditions missing from some repeats are averaged over
    the repeats that have them.
    """
    if not reports:
        raise ValueError("'reports' must not be empty.")
    rates, rates_std = {}, {}
    for split in reports[0]["rates"]:
        rates[split], rates_std[split] = {}, {}
        conditions = dict.fromkeys(
            c for r in reports for c in r["rates"].get(split, {})
        )
        for condition in conditions:
            mean, std = _mean_and_std(
                [
                    r["rates"][split][condition]
                    for r in reports
                    if condition in r["rates"].get(split, {})
                ]
            )
            rates[split][condition] = mean.tolist()
            rates_std[split][condition] = std.tolist()
    metrics, metrics_std = {}, {}
    for name in reports[0]["metrics"]:
        mean, std = _mean_and_std([r["metrics"][name] for r in reports])
        metrics[name], metrics_std[name] = float(mean), float(std)
    costs = {
        name: float(np.mean([r["costs"][name] for r in reports]))
        for name in reports[0]["costs"]
    }
    return {
        "rates": rates,
        "rates_std": rates_std,
        "metrics": metrics,
        "metrics_std": metrics_std,
        "costs": costs,
        "config": dict(config.values),
        "seed": config.seed,
        "seeds": [r["seed"] for r in reports],
        "wall_clock_seconds": float(
            sum(r["wall_clock_seconds"] for r in reports)
        ),
    }


def _run_repeat_worker(
    config: ExperimentConfig, log_filepath: str | None, quiet: bool
) -> ReportDict:
    return _run_single(
        config, get_logger(filepath=log_filepath, quiet=quiet)
    )


def run_repeats(
    config: ExperimentConfig, *, logger: logging.Logger | None = None
) -> ReportDict:
    """
    Run ``config.repeats`` seeds (``seed``, ``seed + 1``, ...) into
    ``seed_<n>`` subdirectories, concurrently when ``workers > 1``, and
    write the aggregated report at the top level.
    """
    logger = get_logger() if logger is None else logger
    configs = [
        config.with_seed(seed).with_output_dir(
            os.path.join(config.output_dir, f"seed_{seed}")
        )
        for seed in range(config.seed, config.seed + config.repeats)
    ]
    reports: dict[int, ReportDict] = {}
    if config.workers > 1:
        log_filepath, quiet = logger_settings(logger)
        try:
            with ProcessPoolExecutor(max_workers=config.workers) as executor:
                futures = {
                    executor.submit(
                        _run_repeat_worker, repeat, log_filepath, quiet
                    ): repeat.seed
                    for repeat in configs
                }
                for future in as_completed(futures):
                    reports[futures[future]] = future.result()
        except BrokenExecutor as exc:
            logger.exception(f"Broken executor: {exc}", exc_info=exc)
            raise
    else:
        for repeat in configs:
            reports[repeat.seed] = _run_single(repeat, logger)

    summary = aggregate_reports([reports[c.seed] for c in configs], config)
    write_report(summary, config, config.output_dir, logger)
    return summary


@benchmark
def run_experiment(
    config: ExperimentConfig, *, logger: logging.Logger | None = None
) -> ReportDict:
    """
    Generate or ingest data, train, evaluate on the held-out split and
    write ``report.json``, ``rates.csv``, ``history.csv`` and the model
    checkpoints.

    :param config: The experiment.
    :param logger: The logger instance.
    :return: The report (aggregated across seeds when ``repeats > 1``).
    """
    logger = get_logger() if logger is None else logger
    prepare_output_dir(config.output_dir, logger, warn_existing=True)
    if config.repeats > 1:
        return run_repeats(config, logger=logger)
    return _run_single(config, logger)


TABLE1_PHI = tuple(round(0.1 * i, 1) for i in range(10))
TABLE1_COSTS = (1, 2, 3, 4, 5)
TABLE2_GAMMAS = (0.2, 0.4, 0.6)
TABLE2_NOISY_COSTS = (0.1, 0.2, 0.5)
TABLE2_FEATURES = 4
TABLE3_ETAS = (0.1, 0.3, 0.5)
TABLE3_NOISY_COST = 0.2
# Trade-off per preset; scales the stated costs to the per-step loss.
TABLE_LAMBDAS = {"table1": 0.0005, "table2": 0.01, "table3": 0.001}

_PRESET_COMMON = {
    "synth.features": "10",
    "synth.steps": "10",
    "synth.episodes": "2000",
    "synth.noise_reading": "std",
    "training.iterations": "1500",
    "training.batch_size": "64",
    "training.selector_learning_rate": "0.003",
    "training.predictor_learning_rate": "0.003",
    "training.baseline": "moving-average",
}
TABLE_PRESETS: dict[str, dict[str, str]] = {
    "table1": {
        **_PRESET_COMMON,
        "synth.label": "exp-sum",
        "synth.phi": ",".join(str(p) for p in TABLE1_PHI),
        "cost.lambda": str(TABLE_LAMBDAS["table1"]),
    },
    "table2": {
        **_PRESET_COMMON,
        "synth.label": "weighted",
        "synth.phi": "0.5",
        "cost.values": "1",
        "cost.lambda": str(TABLE_LAMBDAS["table2"]),
    },
    "table3": {
        **_PRESET_COMMON,
        "synth.label": "binary-ydep",
        "synth.phi": "0.9",
        "synth.gamma": "0.4",
        "cost.values": "1",
        "cost.noisy": str(TABLE3_NOISY_COST),
        "cost.lambda": str(TABLE_LAMBDAS["table3"]),
    },
}


def table_cells(table: str) -> list[tuple[str, dict[str, str]]]:
    """
    Named grid cells of a table preset and their config overrides.
    """
    if table == "table1":
        return [(f"cost_{c}", {"cost.values": str(c)}) for c in TABLE1_COSTS]
    if table == "table2":
        return [
            (
                f"gamma_{gamma}_cost_{cost}",
                {"synth.gamma": str(gamma), "cost.noisy": str(cost)},
            )
            for gamma in TABLE2_GAMMAS
            for cost in TABLE2_NOISY_COSTS
        ]
    if table == "table3":
        return [(f"eta_{eta}", {"cost.eta": str(eta)}) for eta in TABLE3_ETAS]
    raise ConfigError(f"Unknown table '{table}'.")


def _test_rates(report: ReportDict, condition: str = "all") -> np.ndarray:
    by_split = report["rates"].get("test") or next(
        iter(report["rates"].values())
    )
    if condition not in by_split:
        return np.full(len(by_split["all"]), np.nan)
    return np.asarray(by_split[condition])


def _table1(cells: dict[str, ReportDict], spec: SyntheticSpec):
    header = ["feature", "phi", *(f"cost={c}" for c in TABLE1_COSTS)]
    rates = [_test_rates(cells[f"cost_{c}"]) for c in TABLE1_COSTS]
    names = feature_names(spec.n_features)
    rows = [
        [name, float(phi), *(float(r[i]) for r in rates)]
        for i, (name, phi) in enumerate(zip(names, spec.phi))
    ]
    rows.append(
        [
            "rmse",
            "",
            *(
                float(cells[f"cost_{c}"]["metrics"]["rmse"])
                for c in TABLE1_COSTS
            ),
        ]
    )
    return header, rows


def _table2(cells: dict[str, ReportDict], spec: SyntheticSpec):
    header = ["gamma", "feature"]
    for cost in TABLE2_NOISY_COSTS:
        header += [f"c={cost}:true", f"c={cost}:noisy"]
    rows = []
    for gamma in TABLE2_GAMMAS:
        rates = [
            _test_rates(cells[f"gamma_{gamma}_cost_{cost}"])
            for cost in TABLE2_NOISY_COSTS
        ]
        n_true = len(rates[0]) // 2
        shown = min(TABLE2_FEATURES, spec.n_features)
        for i, name in enumerate(feature_names(shown)):
            row = [float(gamma), name]
            for rate in rates:
                row += [float(rate[i]), float(rate[n_true + i])]
            rows.append(row)
    return header, rows


def _table3(cells: dict[str, ReportDict], _spec: SyntheticSpec):
    header = ["label"]
    for eta in TABLE3_ETAS:
        header += [f"eta={eta}:true", f"eta={eta}:noisy"]
    rows = []
    for label in ("y=1", "y=0"):
        row = [label]
        for eta in TABLE3_ETAS:
            rate = _test_rates(cells[f"eta_{eta}"], label)
            n_true = len(rate) // 2
            row += [float(rate[:n_true].mean()), float(rate[n_true:].mean())]
        rows.append(row)
    return header, rows


_TABLE_BUILDERS = {"table1": _table1, "table2": _table2, "table3": _table3}


@benchmark
def reproduce_table(
    table: str,
    seed: int,
    *,
    output_dir: str,
    overrides: Mapping[str, str] | None = None,
    logger: logging.Logger | None = None,
) -> dict:
    """
    Run every cell of a table preset and write the table as
    ``rates.csv`` plus all cell reports in ``report.json``.

    :param table: ``table1``, ``table2`` or ``table3``.
    :param seed: Base seed shared by every cell.
    :param output_dir: Cell runs go to ``<output_dir>/<cell>``.
    :param overrides: Extra config values applied to every cell.
    :param logger: The logger instance.
    :return: ``{"table", "seed", "header", "rows", "cells"}``.
    """
    logger = get_logger() if logger is None else logger
    if table not in TABLE_PRESETS:
        raise ConfigError(f"Unknown table '{table}'.")
    output_dir = prepare_output_dir(output_dir, logger, warn_existing=True)
    cells = {}
    spec = None
    for name, cell in table_cells(table):
        values = {
            **TABLE_PRESETS[table],
            **cell,
            **(overrides or {}),
            "seed": str(seed),
            "output.dir": os.path.join(output_dir, name),
        }
        config = build_experiment_config(values)
        if config.synthetic is None:
            raise ConfigError(f"'{table}' needs a synthetic data source.")
        spec = spec or config.synthetic
        logger.info("Running %s cell %s", table, name)
        cells[name] = run_experiment(config, logger=logger)
    header, rows = _TABLE_BUILDERS[table](cells, spec)
    write_csv(os.path.join(output_dir, "rates.csv"), header, rows, logger)
    document = {
        "table": table,
        "seed": seed,
        "header": header,
        "rows": rows,
        "cells": cells,
    }
    write_json(os.path.join(output_dir, "report.json"), document, logger)
    return document


def summarize_report(path: str) -> str:
    """
    One-line summary of a ``report.json`` file.
    """
    with open(path, "r", encoding="utf-8") as file:
        report = json.load(file)
    if "cells" in report:
        return f"{path}: {report['table']} seed {report['seed']}, " + (
            f"{len(report['cells'])} cells"
        )
    metrics = ", ".join(
        f"{name}={value:.4f}"
        for name, value in sorted(report.get("metrics", {}).items())
    )
    rate = report.get("costs", {}).get("mean_measurement_rate", math.nan)
    return (
        f"{path}: seed {report.get('seed')}, {metrics}, "
        f"mean measurement rate {rate:.3f}"
    )
