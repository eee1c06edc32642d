"""
Joint training of the selector and predictor networks.

Each iteration draws a mini-batch, rolls the current selector out on
it, takes one predictor step on the resulting observations, then one
selector step using the score-function estimator weighted by the
reward-to-come ``G_j = sum_{t >= j} (l_t + lambda * cost_t)``.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from asac_tool.autodiff import NodeRef, Optimizer, Tape, clip_by_global_norm
from asac_tool.errors import NonFiniteError, ShapeError
from asac_tool.helpers.helpers_benchmark import benchmark
from asac_tool.helpers.helpers_logging import get_logger
from asac_tool.seqmodel import (
    PredictorModel,
    SelectorModel,
    make_predictor,
    make_selector,
    prediction_loss,
    predictor_step,
    save_model,
    selector_step,
)
from asac_tool.sensing import (
    apply_delayed_mask,
    decision_log_prob,
    empty_observation,
    enforce_static_nesting,
    sample_decision,
    step_cost,
    update_static_observation,
)
from asac_tool.types import (
    Baseline,
    CostModel,
    Episode,
    Mode,
    SensingTrajectory,
    Task,
    TrainingConfig,
    TrainingHistory,
)

DECISION_RULES = ("sample", "threshold")
EVALUATION_CHUNK = 512


@dataclass(frozen=True)
class NetworkSpec:
    """
    Architecture shared by the selector and predictor.
    """

    task: Task = Task.REGRESSION
    n_classes: int = 2
    hidden_size: int = 32
    head_layers: tuple[int, ...] = field(default_factory=tuple)
    init_scheme: str = "uniform-scaled"

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        object.__setattr__(self, "head_layers", tuple(self.head_layers))


class MovingAverageBaseline:
    """
    Exponential moving average of the reward-to-come, bias-corrected
    for its zero start. Only past batches feed the value that is
    subtracted, so the estimator stays unbiased.
    """

    def __init__(self, decay: float = 0.99):
        self.decay = decay
        self._average = 0.0
        self._updates = 0

    @property
    def value(self) -> float:
        if self._updates == 0:
            return 0.0
        return self._average / (1.0 - self.decay**self._updates)

    def update(self, mean_return: float) -> None:
        """
        Fold one batch mean into the average.
        """
        self._average = (
            self.decay * self._average + (1.0 - self.decay) * mean_return
        )
        self._updates += 1


def _as_batch(episodes: Episode | Iterable[Episode]) -> list[Episode]:
    batch = [episodes] if isinstance(episodes, Episode) else list(episodes)
    if not batch:
        raise ValueError("'episodes' must not be empty.")
    lengths = {e.length for e in batch}
    widths = {e.n_features for e in batch}
    if len(lengths) != 1 or len(widths) != 1:
        raise ShapeError(
            "A rollout batch needs equal lengths and widths, got "
            f"lengths {sorted(lengths)} and widths {sorted(widths)}"
        )
    return batch


def group_by_length(episodes: Sequence[Episode]) -> list[list[Episode]]:
    """
    Split episodes into equal-length groups (in order of first
    appearance), so each group unrolls without padding.
    """
    groups: dict[int, list[Episode]] = {}
    for episode in episodes:
        groups.setdefault(episode.length, []).append(episode)
    return list(groups.values())


def rollout(
    selector: SelectorModel,
    predictor: PredictorModel,
    episodes: Episode | Iterable[Episode],
    cost_model: CostModel,
    mode: Mode | str,
    rng: np.random.Generator | None,
    *,
    decisions: np.ndarray | None = None,
    rule: str = "sample",
) -> SensingTrajectory:
    """
    Run the selector and predictor over a batch of equal-length
    episodes.

    At step t the selector reads the observation of step t-1 (an empty
    observation before the first step) and outputs probabilities for
    s_t; s_t is drawn, the step's observation is assembled, and the
    predictor reads it.

    :param selector: The selector network.
    :param predictor: The predictor network.
    :param episodes: One episode or several of equal length.
    :param cost_model: Costs, lambda, eta and delays.
    :param mode: Static or time-series.
    :param rng: Generator for the Bernoulli draws.
    :param decisions: Optional ``(B, T, d)`` decisions to force instead
    of sampling.
    :param rule: ``sample`` draws decisions; ``threshold`` measures
    where the probability is at least 0.5.
    :return: The trajectory record.
    """
    batch = _as_batch(episodes)
    mode = Mode(mode)
    if rule not in DECISION_RULES:
        raise ValueError(f"Unknown decision rule '{rule}'.")
    n_episodes, length, d = len(batch), batch[0].length, batch[0].n_features
    for model in (selector, predictor):
        if model.dims.n_features != d:
            raise ShapeError(
                f"The {model.kind} expects {model.dims.n_features} "
                f"features, the episodes have {d}"
            )
    if cost_model.n_features != d:
        raise ShapeError(f"Cost model has {cost_model.n_features} features.")
    if mode is Mode.STATIC and np.any(cost_model.delays > 0):
        raise ValueError("Measurement delays need the time-series mode.")
    if decisions is not None:
        decisions = np.asarray(decisions, dtype=np.float64)
        if decisions.shape != (n_episodes, length, d):
            raise ShapeError(
                f"Forced decisions {decisions.shape} do not match "
                f"{(n_episodes, length, d)}"
            )
    elif rule == "sample" and rng is None:
        raise ValueError("The random generator is invalid or null.")

    features = np.stack([e.features for e in batch])
    labels = np.stack([e.labels for e in batch])
    availability = np.stack([e.availability for e in batch])
    record = {
        key: np.zeros((n_episodes, length, d))
        for key in (
            "probabilities",
            "sampled",
            "decisions",
            "charged",
            "observed_values",
            "observed_mask",
            "missing",
        )
    }
    losses = np.zeros((n_episodes, length))
    predictions = []

    selector_tape, predictor_tape = Tape(), Tape()
    selector_state = predictor_state = None
    previous = empty_observation((n_episodes, d))
    for t in range(length):
        selector_state, probs_ref = selector_step(
            selector,
            selector_state,
            previous.mask,
            previous.values,
            tape=selector_tape,
        )
        probs = selector_tape.value(probs_ref)
        if decisions is not None:
            sampled = decisions[:, t]
        elif rule == "threshold":
            sampled = (probs >= 0.5).astype(np.float64)
        else:
            sampled = sample_decision(probs, rng)
        record["sampled"][:, t] = sampled

        if mode is Mode.STATIC:
            before = record["decisions"][:, t - 1] if t else 0.0 * sampled
            in_force = enforce_static_nesting(before, sampled)
            observed = update_static_observation(
                previous, features[:, t], in_force, availability[:, t]
            )
            charged = observed.mask - previous.mask
        else:
            in_force = sampled
            observed = apply_delayed_mask(
                features[:, : t + 1],
                record["sampled"][:, : t + 1],
                cost_model.delays,
                availability=availability[:, : t + 1],
            )
            charged = sampled * availability[:, t]

        predictor_state, prediction_ref = predictor_step(
            predictor,
            predictor_state,
            observed.mask,
            observed.values,
            tape=predictor_tape,
        )
        loss_ref = prediction_loss(
            predictor_tape, prediction_ref, labels[:, t], predictor.task
        )
        record["probabilities"][:, t] = probs
        record["decisions"][:, t] = in_force
        record["charged"][:, t] = charged
        record["observed_values"][:, t] = observed.values
        record["observed_mask"][:, t] = observed.mask
        record["missing"][:, t] = observed.missing
        predictions.append(predictor_tape.value(prediction_ref))
        losses[:, t] = predictor_tape.value(loss_ref)
        previous = observed

    return SensingTrajectory(
        episode_ids=tuple(e.episode_id for e in batch),
        features=features,
        labels=labels,
        availability=availability,
        predictions=np.stack(predictions, axis=1),
        losses=losses,
        costs=step_cost(record["charged"], cost_model, labels),
        mode=mode,
        **record,
    )


def _selector_inputs(trajectory: SensingTrajectory, t: int):
    if t == 0:
        empty = empty_observation(
            (trajectory.n_episodes, trajectory.features.shape[-1])
        )
        return empty.mask, empty.values
    return (
        trajectory.observed_mask[:, t - 1],
        trajectory.observed_values[:, t - 1],
    )


def gradient_keep_mask(trajectory: SensingTrajectory) -> np.ndarray:
    """
    ``(B, T, d)`` weights for the log-probability terms: 0 where a
    feature was selected but missing from the source data, else 1.
    """
    return 1.0 - trajectory.sampled * (1.0 - trajectory.availability)


def replay_log_probs(
    selector: SelectorModel, trajectory: SensingTrajectory, tape: Tape
) -> list[NodeRef]:
    """
    Re-run the selector over the recorded observations and return one
    ``(B,)`` log-probability node per step, with selected-but-missing
    coordinates dropped.
    """
    keep = gradient_keep_mask(trajectory)
    state, log_probs = None, []
    for t in range(trajectory.length):
        mask, values = _selector_inputs(trajectory, t)
        state, probs = selector_step(selector, state, mask, values, tape=tape)
        log_probs.append(
            decision_log_prob(
                tape, probs, trajectory.sampled[:, t], keep[:, t]
            )
        )
    return log_probs


def replay_losses(
    predictor: PredictorModel, trajectory: SensingTrajectory, tape: Tape
) -> list[NodeRef]:
    """
    Re-run the predictor over the recorded observations (decisions held
    fixed) and return one ``(B,)`` loss node per step.
    """
    state, losses = None, []
    for t in range(trajectory.length):
        state, prediction = predictor_step(
            predictor,
            state,
            trajectory.observed_mask[:, t],
            trajectory.observed_values[:, t],
            tape=tape,
        )
        losses.append(
            prediction_loss(
                tape, prediction, trajectory.labels[:, t], predictor.task
            )
        )
    return losses


def _weighted_total(
    tape: Tape, refs: Sequence[NodeRef], weights: np.ndarray
) -> NodeRef:
    """
    ``sum_t sum_b weights[b, t] * value(refs[t])[b]`` as a scalar node.
    """
    total = None
    for t, ref in enumerate(refs):
        term = tape.sum(tape.mul(tape.constant(weights[:, t]), ref))
        total = term if total is None else tape.add(total, term)
    return total


def _check_trajectories(trajectories) -> list[SensingTrajectory]:
    trajectories = list(trajectories)
    if not trajectories or sum(t.n_episodes for t in trajectories) == 0:
        raise ValueError("'trajectories' must not be empty.")
    return trajectories


def _accumulate(total: dict | None, grads: dict) -> dict:
    if total is None:
        return {name: np.array(g) for name, g in grads.items()}
    return {name: total[name] + grads[name] for name in total}


def predictor_gradient(
    predictor: PredictorModel, trajectories: Iterable[SensingTrajectory]
) -> tuple[dict[str, np.ndarray], float]:
    """
    Gradient of the mini-batch objective
    ``(1 / n_mb) sum_i sum_t l_{t,i}`` with decisions held fixed.
    :return: Gradient blocks and the objective value.
    """
    trajectories = _check_trajectories(trajectories)
    n_episodes = sum(t.n_episodes for t in trajectories)
    total_grads, objective = None, 0.0
    for trajectory in trajectories:
        tape = Tape()
        losses = replay_losses(predictor, trajectory, tape)
        weights = np.full(
            (trajectory.n_episodes, trajectory.length), 1.0 / n_episodes
        )
        output = _weighted_total(tape, losses, weights)
        objective += float(tape.value(output))
        total_grads = _accumulate(
            total_grads, predictor.gradients(tape.backward(output))
        )
    if not math.isfinite(objective):
        raise NonFiniteError("Non-finite predictor loss.")
    return total_grads, objective


def predictor_update(
    predictor: PredictorModel,
    trajectories: Iterable[SensingTrajectory],
    optimizer: Optimizer,
) -> PredictorModel:
    """
    One optimizer step on the predictor's mini-batch loss.
    """
    if optimizer is None:
        raise ValueError("The optimizer is invalid or null.")
    grads, _ = predictor_gradient(predictor, trajectories)
    return predictor.with_params(optimizer.step(predictor.params, grads))


def evaluate_losses(
    predictor: PredictorModel, trajectory: SensingTrajectory
) -> np.ndarray:
    """
    ``(B, T)`` prediction losses of ``predictor`` on the recorded
    observations.
    """
    tape = Tape()
    refs = replay_losses(predictor, trajectory, tape)
    return np.stack([tape.value(ref) for ref in refs], axis=1)


def reward_to_come(rewards: np.ndarray) -> np.ndarray:
    """
    ``G[:, j] = sum_{t >= j} rewards[:, t]``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    return np.flip(np.cumsum(np.flip(rewards, axis=-1), axis=-1), axis=-1)


def selector_gradient(
    selector: SelectorModel,
    trajectories: Iterable[SensingTrajectory],
    cost_model: CostModel,
    *,
    predictor: PredictorModel | None = None,
    baseline: MovingAverageBaseline | None = None,
    episode_weights: Sequence[np.ndarray] | None = None,
) -> tuple[dict[str, np.ndarray], float]:
    """
    Score-function estimate of the gradient of the expected
    loss-plus-cost.

    :param selector: The selector network.
    :param trajectories: Rollouts under ``selector``.
    :param cost_model: Cost model used to price the charged bits.
    :param predictor: When given, step losses are recomputed with it;
    otherwise the recorded losses are used.
    :param baseline: Optional baseline subtracted from every ``G``.
    :param episode_weights: Optional per-trajectory ``(B,)`` weights
    replacing the default ``1 / n_mb``.
    :return: Gradient blocks and the mean per-episode objective.
    """
    trajectories = _check_trajectories(trajectories)
    n_episodes = sum(t.n_episodes for t in trajectories)
    offset = 0.0 if baseline is None else baseline.value
    total_grads, objective, returns = None, 0.0, []
    for index, trajectory in enumerate(trajectories):
        losses = (
            trajectory.losses
            if predictor is None
            else evaluate_losses(predictor, trajectory)
        )
        costs = step_cost(trajectory.charged, cost_model, trajectory.labels)
        returns_to_come = reward_to_come(losses + costs)
        returns.append(returns_to_come)
        if episode_weights is None:
            weights = np.full(trajectory.n_episodes, 1.0 / n_episodes)
        else:
            weights = np.asarray(episode_weights[index], dtype=np.float64)
        objective += float(np.sum(weights * returns_to_come[:, 0]))

        tape = Tape()
        log_probs = replay_log_probs(selector, trajectory, tape)
        output = _weighted_total(
            tape, log_probs, weights[:, None] * (returns_to_come - offset)
        )
        total_grads = _accumulate(
            total_grads, selector.gradients(tape.backward(output))
        )
    if baseline is not None:
        baseline.update(float(np.mean(np.concatenate(returns, axis=None))))
    return total_grads, objective


def selector_update(
    selector: SelectorModel,
    trajectories: Iterable[SensingTrajectory],
    optimizer: Optimizer,
    cost_model: CostModel,
    config: TrainingConfig,
    *,
    predictor: PredictorModel | None = None,
    baseline: MovingAverageBaseline | None = None,
    logger: logging.Logger | None = None,
) -> SelectorModel:
    """
    One clipped optimizer step along the selector gradient estimate.
    """
    if optimizer is None:
        raise ValueError("The optimizer is invalid or null.")
    grads, _ = selector_gradient(
        selector,
        trajectories,
        cost_model,
        predictor=predictor,
        baseline=baseline,
    )
    grads, norm = clip_by_global_norm(grads, config.clip_norm)
    if logger is not None and 0 < config.clip_norm < norm:
        logger.debug("Selector gradient norm %.4f clipped", norm)
    return selector.with_params(optimizer.step(selector.params, grads))


def initialize_models(
    n_features: int, network: NetworkSpec, seed: int
) -> tuple[SelectorModel, PredictorModel]:
    """
    Fresh selector and predictor for ``n_features`` features.
    """
    selector = make_selector(
        n_features,
        hidden_size=network.hidden_size,
        head_layers=network.head_layers,
        seed=seed,
        scheme=network.init_scheme,
    )
    predictor = make_predictor(
        n_features,
        task=network.task,
        n_classes=network.n_classes,
        hidden_size=network.hidden_size,
        head_layers=network.head_layers,
        seed=seed + 1,
        scheme=network.init_scheme,
    )
    return selector, predictor


def _save_checkpoints(
    directory: str,
    iteration: int,
    selector: SelectorModel,
    predictor: PredictorModel,
) -> None:
    save_model(
        os.path.join(directory, f"selector_{iteration:06d}.json"), selector
    )
    save_model(
        os.path.join(directory, f"predictor_{iteration:06d}.json"), predictor
    )


@benchmark
def joint_train(
    dataset: Sequence[Episode],
    network: NetworkSpec,
    cost_model: CostModel,
    config: TrainingConfig,
    *,
    logger: logging.Logger | None = None,
) -> tuple[SelectorModel, PredictorModel, TrainingHistory]:
    """
    Alternate predictor and selector updates on fresh mini-batches.

    :param dataset: Training episodes sharing the feature count.
    :param network: Architecture of both networks.
    :param cost_model: Costs, lambda, eta and delays.
    :param config: Training hyper-parameters.
    :param logger: Logger for progress messages.
    :return: Trained selector, trained predictor and the history.
    """
    logger = get_logger() if logger is None else logger
    dataset = list(dataset)
    if not dataset:
        raise ValueError("'dataset' must not be empty.")
    widths = {e.n_features for e in dataset}
    if len(widths) != 1:
        raise ShapeError(f"Episodes have different widths: {sorted(widths)}")

    rng = np.random.default_rng(config.seed)
    selector, predictor = initialize_models(
        widths.pop(), network, config.seed
    )
    selector_optimizer = Optimizer(
        config.optimizer, config.selector_learning_rate
    )
    predictor_optimizer = Optimizer(
        config.optimizer, config.predictor_learning_rate
    )
    baseline = (
        MovingAverageBaseline(config.baseline_decay)
        if config.baseline is Baseline.MOVING_AVERAGE
        else None
    )
    history = TrainingHistory()
    batch_size = min(config.batch_size, len(dataset))

    logger.info(
        "Training on %d episodes: %d iterations, batch %d, mode %s",
        len(dataset),
        config.iterations,
        batch_size,
        config.mode,
    )
    for iteration in range(1, config.iterations + 1):
        chosen = rng.choice(len(dataset), size=batch_size, replace=False)
        batch = [
            dataset[i]
            for i in chosen
            for _ in range(config.samples_per_decision)
        ]
        trajectories = [
            rollout(selector, predictor, group, cost_model, config.mode, rng)
            for group in group_by_length(batch)
        ]
        predictor = predictor_update(
            predictor, trajectories, predictor_optimizer
        )
        selector = selector_update(
            selector,
            trajectories,
            selector_optimizer,
            cost_model,
            config,
            predictor=predictor,
            baseline=baseline,
            logger=logger,
        )

        steps = sum(t.losses.size for t in trajectories)
        loss = sum(t.losses.sum() for t in trajectories) / steps
        cost = sum(t.costs.sum() for t in trajectories) / steps
        rate = float(
            np.mean(
                np.concatenate([t.decisions.ravel() for t in trajectories])
            )
        )
        history.append(loss, loss + cost, rate)

        if config.log_every and iteration % config.log_every == 0:
            logger.info(
                "Iteration %d: predictor loss %.5f, objective %.5f, "
                "measurement rate %.3f",
                iteration,
                loss,
                loss + cost,
                rate,
            )
        if (
            config.checkpoint_dir
            and config.checkpoint_every
            and iteration % config.checkpoint_every == 0
        ):
            _save_checkpoints(
                config.checkpoint_dir, iteration, selector, predictor
            )

    return selector, predictor, history


def rollout_dataset(
    selector: SelectorModel,
    predictor: PredictorModel,
    episodes: Sequence[Episode],
    cost_model: CostModel,
    mode: Mode | str,
    rng: np.random.Generator,
    *,
    rule: str = "sample",
    chunk_size: int = EVALUATION_CHUNK,
) -> list[SensingTrajectory]:
    """
    Roll the trained pair out over a whole dataset in equal-length
    chunks.
    """
    trajectories = []
    for group in group_by_length(list(episodes)):
        for start in range(0, len(group), chunk_size):
            trajectories.append(
                rollout(
                    selector,
                    predictor,
                    group[start : start + chunk_size],
                    cost_model,
                    mode,
                    rng,
                    rule=rule,
                )
            )
    return trajectories
