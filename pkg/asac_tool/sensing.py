"""
Observation model and sensing decisions.

Arrays may carry leading batch axes; the feature axis is always last.
Step indices are 0-based, so the first step of an episode is ``t = 0``.
"""

import numpy as np

from asac_tool import SENTINEL
from asac_tool.autodiff import NodeRef, Tape
from asac_tool.errors import ShapeError
from asac_tool.types import CostModel, ObservedVector


def _bits(s) -> np.ndarray:
    return (np.asarray(s, dtype=np.float64) > 0.5).astype(np.float64)


def apply_mask(x, s) -> ObservedVector:
    """
    Keep ``x`` where ``s`` is 1 and write the sentinel elsewhere.
    """
    x = np.asarray(x, dtype=np.float64)
    s = _bits(s)
    if x.shape != s.shape:
        raise ShapeError(f"apply_mask: x {x.shape} vs s {s.shape}")
    return ObservedVector(
        values=np.where(s > 0, x, SENTINEL),
        mask=s,
        missing=np.zeros_like(s),
    )


def apply_delayed_mask(
    history,
    decisions,
    delays,
    t: int | None = None,
    availability=None,
) -> ObservedVector:
    """
    Observation at step ``t`` when feature ``i`` takes ``delays[i]``
    steps to report.

    Entry ``i`` is observed iff ``u = t - delays[i] >= 0``, feature ``i``
    was selected at step ``u`` and its value at ``u`` is available; the
    value carried is ``history[u, i]``. A selected but unavailable value
    is flagged in ``missing`` when it would have arrived.

    :param history: ``(..., T, d)`` feature values.
    :param decisions: ``(..., T, d)`` sensing decisions.
    :param delays: ``(d,)`` non-negative integer delays.
    :param t: Step index; defaults to the last row.
    :param availability: ``(..., T, d)`` source availability flags.
    :return: The observed vector at step ``t``.
    """
    history = np.asarray(history, dtype=np.float64)
    decisions = _bits(decisions)
    if history.ndim < 2 or history.shape != decisions.shape:
        raise ShapeError(
            f"apply_delayed_mask: history {history.shape} vs "
            f"decisions {decisions.shape}"
        )
    delays = np.asarray(delays, dtype=np.int64).reshape(-1)
    d = history.shape[-1]
    if delays.shape != (d,) or np.any(delays < 0):
        raise ShapeError(f"Expected {d} non-negative delays, got {delays}")
    t = history.shape[-2] - 1 if t is None else t
    if not 0 <= t < history.shape[-2]:
        raise ValueError(f"Step {t} is outside the history.")
    available = (
        np.ones_like(history)
        if availability is None
        else _bits(availability)
    )

    source = t - delays
    reached = source >= 0
    rows = np.clip(source, 0, None)
    columns = np.arange(d)
    selected = decisions[..., rows, columns] * reached
    present = available[..., rows, columns]
    mask = selected * present
    return ObservedVector(
        values=np.where(mask > 0, history[..., rows, columns], SENTINEL),
        mask=mask,
        missing=selected * (1.0 - present),
    )


def enforce_static_nesting(s_prev, s_new) -> np.ndarray:
    """
    Once measured, a feature stays measured: elementwise OR.
    """
    s_prev, s_new = _bits(s_prev), _bits(s_new)
    if s_prev.shape != s_new.shape:
        raise ShapeError(
            f"enforce_static_nesting: {s_prev.shape} vs {s_new.shape}"
        )
    return np.maximum(s_prev, s_new)


def update_static_observation(
    previous: ObservedVector, x_t, cumulative, available=None
) -> ObservedVector:
    """
    Static-mode observation: a value read at its first measurement is
    kept for the rest of the episode.

    :param previous: Observation from the previous step.
    :param x_t: Current feature values.
    :param cumulative: Nested decision in force at this step.
    :param available: Source availability at this step.
    :return: The updated observation.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    cumulative = _bits(cumulative)
    available = np.ones_like(x_t) if available is None else _bits(available)
    newly = cumulative * (1.0 - previous.mask) * available
    return ObservedVector(
        values=np.where(newly > 0, x_t, previous.values),
        mask=np.maximum(previous.mask, newly),
        missing=cumulative * (1.0 - previous.mask) * (1.0 - available),
    )


def empty_observation(shape) -> ObservedVector:
    """
    All-sentinel observation with an all-zero mask.
    """
    zeros = np.zeros(shape)
    return ObservedVector(np.full(shape, SENTINEL), zeros, zeros.copy())


def sample_decision(probs, rng: np.random.Generator) -> np.ndarray:
    """
    Independent Bernoulli draws, one per feature.
    """
    if rng is None:
        raise ValueError("The random generator is invalid or null.")
    probs = np.asarray(probs, dtype=np.float64)
    return (rng.random(probs.shape) < probs).astype(np.float64)


def decision_log_prob(
    tape: Tape, probs: NodeRef, s, keep=None
) -> NodeRef:
    """
    ``sum_i [s_i log p_i + (1 - s_i) log(1 - p_i)]`` on the tape.

    :param tape: Tape holding ``probs``.
    :param probs: ``(..., d)`` clamped probabilities.
    :param s: Decision bits with the same shape.
    :param keep: Optional 0/1 weights per coordinate; coordinates with 0
    contribute nothing (used to drop selected-but-missing features).
    :return: Log-probability node with the feature axis summed out.
    """
    s = _bits(s)
    if tape.value(probs).shape != s.shape:
        raise ShapeError(
            f"decision_log_prob: probs {tape.value(probs).shape} vs "
            f"s {s.shape}"
        )
    log_p = tape.log(probs)
    log_not_p = tape.log(
        tape.add(tape.constant(np.ones(s.shape)), tape.negate(probs))
    )
    terms = tape.add(
        tape.mul(tape.constant(s), log_p),
        tape.mul(tape.constant(1.0 - s), log_not_p),
    )
    if keep is not None:
        terms = tape.mul(tape.constant(_bits(keep)), terms)
    return tape.sum(terms, axis=-1)


def step_cost(s, cost_model: CostModel, y_t, available=None):
    """
    ``lam * m(y) * sum_i c_i s_i`` with ``m(y) = eta`` on the adverse
    label. Features missing from the source data cost nothing.

    :param s: ``(..., d)`` bits to charge.
    :param cost_model: The cost model.
    :param y_t: Label(s) at this step, shaped like ``s`` without the
    feature axis.
    :param available: Optional ``(..., d)`` availability flags.
    :return: Cost per leading index (a float for a single vector).
    """
    s = _bits(s)
    if s.shape[-1] != cost_model.n_features:
        raise ShapeError(
            f"step_cost: {s.shape[-1]} features vs "
            f"{cost_model.n_features} costs"
        )
    if available is not None:
        s = s * _bits(available)
    cost = (
        cost_model.lam
        * cost_model.multiplier(y_t)
        * np.sum(s * cost_model.costs, axis=-1)
    )
    return float(cost) if np.ndim(cost) == 0 else cost
