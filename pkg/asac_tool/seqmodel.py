"""
LSTM predictor and selector networks.

Both networks read, at every step, the observed vector (sentinel at
unobserved slots) concatenated with the observation mask, update an LSTM
state and apply a dense head. The predictor head is linear (regression)
or softmax (classification); the selector head is a clamped logistic
giving one measurement probability per feature.
"""

from dataclasses import dataclass, field
from typing import Any, Mapping, NamedTuple

import numpy as np

from asac_tool import PROB_EPS, SENTINEL
from asac_tool.autodiff import (
    NodeRef,
    ParamDict,
    Tape,
    load_checkpoint,
    save_checkpoint,
)
from asac_tool.errors import ShapeError
from asac_tool.types import Task

INIT_SCHEMES = ("uniform-scaled", "zeros")
FORGET_GATE_BIAS = 1.0
LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class ModelDims:
    """
    Network dimensions.

    :param n_features: Number of features d; the LSTM input is 2d.
    :param n_outputs: Head width: 1 (regression), C (classes) or d.
    :param hidden_size: LSTM state size.
    :param head_layers: Hidden widths of the dense head (empty means a
    single dense layer).
    """

    n_features: int
    n_outputs: int
    hidden_size: int = 32
    head_layers: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "head_layers", tuple(self.head_layers))
        sizes = (self.n_features, self.n_outputs, self.hidden_size)
        if any(size < 1 for size in sizes + self.head_layers):
            raise ValueError(f"Model dimensions must be positive: {self}")

    @property
    def input_size(self) -> int:
        """
        Width of the concatenated (values, mask) input.
        """
        return 2 * self.n_features


@dataclass(frozen=True)
class LstmCellParams:
    """
    Gate weights in input / forget / output / candidate order.
    """

    w_input: np.ndarray
    w_hidden: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        hidden = self.w_hidden.shape[0]
        if (
            self.w_hidden.shape != (hidden, 4 * hidden)
            or self.w_input.shape[1] != 4 * hidden
            or self.bias.shape != (4 * hidden,)
        ):
            raise ShapeError(
                "Inconsistent LSTM shapes: "
                f"{self.w_input.shape}, {self.w_hidden.shape}, "
                f"{self.bias.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.w_hidden.shape[0]


class LstmState(NamedTuple):
    """
    Hidden and cell state nodes on a tape.
    """

    hidden: NodeRef
    cell: NodeRef


@dataclass(frozen=True)
class _Network:
    params: Mapping[str, np.ndarray]
    dims: ModelDims

    kind = "network"

    @property
    def cell(self) -> LstmCellParams:
        """
        The LSTM cell parameters.
        """
        return LstmCellParams(
            self.params["cell.w_input"],
            self.params["cell.w_hidden"],
            self.params["cell.bias"],
        )

    def with_params(self, params: Mapping[str, np.ndarray]):
        """
        A copy of the model carrying ``params``.
        """
        if set(params) != set(self.params):
            raise ShapeError("Parameter blocks differ from the model's.")
        return type(self)(**{**self.__dict__, "params": dict(params)})

    def bind(self, tape: Tape) -> dict[str, NodeRef]:
        """
        Register the parameters on ``tape`` under ``<kind>.<name>``.
        """
        return {
            name: tape.parameter(f"{self.kind}.{name}", value)
            for name, value in self.params.items()
        }

    def gradients(self, tape_gradients: Mapping[str, np.ndarray]) -> ParamDict:
        """
        Pick this model's blocks out of a tape gradient map.
        """
        return {
            name: np.asarray(tape_gradients[f"{self.kind}.{name}"])
            for name in self.params
        }

    def metadata(self) -> dict[str, Any]:
        """
        Everything besides the arrays needed to rebuild the model.
        """
        return {
            "kind": self.kind,
            "n_features": self.dims.n_features,
            "n_outputs": self.dims.n_outputs,
            "hidden_size": self.dims.hidden_size,
            "head_layers": list(self.dims.head_layers),
        }


@dataclass(frozen=True)
class PredictorModel(_Network):
    """
    Predictor network: LSTM state H_t and a dense head.
    """

    task: Task = Task.REGRESSION

    kind = "predictor"

    def __post_init__(self):
        object.__setattr__(self, "task", Task(self.task))
        if self.task is Task.REGRESSION and self.dims.n_outputs != 1:
            raise ShapeError("A regression head has exactly one output.")
        if self.task is Task.CLASSIFICATION and self.dims.n_outputs < 2:
            raise ShapeError("A classification head needs >= 2 classes.")

    @property
    def n_classes(self) -> int | None:
        """
        Number of classes, or None for regression.
        """
        if self.task is Task.CLASSIFICATION:
            return self.dims.n_outputs
        return None

    def metadata(self) -> dict[str, Any]:
        return {**super().metadata(), "task": str(self.task)}


@dataclass(frozen=True)
class SelectorModel(_Network):
    """
    Selector network: LSTM state h_t and a logistic head over features.
    """

    kind = "selector"

    def __post_init__(self):
        if self.dims.n_outputs != self.dims.n_features:
            raise ShapeError("A selector head has one output per feature.")


def _head_shapes(dims: ModelDims) -> list[tuple[int, int]]:
    widths = (dims.hidden_size,) + dims.head_layers + (dims.n_outputs,)
    return list(zip(widths[:-1], widths[1:]))


def parameter_shapes(dims: ModelDims) -> dict[str, tuple[int, ...]]:
    """
    Shapes of every parameter block for ``dims``.
    """
    hidden = dims.hidden_size
    shapes = {
        "cell.w_input": (dims.input_size, 4 * hidden),
        "cell.w_hidden": (hidden, 4 * hidden),
        "cell.bias": (4 * hidden,),
    }
    for layer, (fan_in, fan_out) in enumerate(_head_shapes(dims)):
        shapes[f"head.{layer}.weight"] = (fan_in, fan_out)
        shapes[f"head.{layer}.bias"] = (fan_out,)
    return shapes


def init_params(
    dims: ModelDims, seed: int, scheme: str = "uniform-scaled"
) -> ParamDict:
    """
    Initialize parameters reproducibly.

    ``uniform-scaled`` draws weights from U(-b, b) with
    b = sqrt(6 / (fan_in + fan_out)), zero biases and a forget-gate bias
    of 1; ``zeros`` sets everything to 0.
    :param dims: Network dimensions.
    :param seed: Seed for the generator.
    :param scheme: One of ``INIT_SCHEMES``.
    :return: Parameter blocks keyed by name.
    """
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"Unknown initialization scheme '{scheme}'.")
    rng = np.random.default_rng(seed)
    params: ParamDict = {}
    for name, shape in parameter_shapes(dims).items():
        if scheme == "zeros" or len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = rng.uniform(-bound, bound, size=shape)
    if scheme == "uniform-scaled":
        hidden = dims.hidden_size
        params["cell.bias"][hidden : 2 * hidden] = FORGET_GATE_BIAS
    return params


def make_predictor(
    n_features: int,
    *,
    task: Task | str = Task.REGRESSION,
    n_classes: int = 2,
    hidden_size: int = 32,
    head_layers: tuple[int, ...] = (),
    seed: int = 0,
    scheme: str = "uniform-scaled",
) -> PredictorModel:
    """
    Build an initialized predictor.
    """
    task = Task(task)
    n_outputs = n_classes if task is Task.CLASSIFICATION else 1
    dims = ModelDims(n_features, n_outputs, hidden_size, head_layers)
    return PredictorModel(init_params(dims, seed, scheme), dims, task)


def make_selector(
    n_features: int,
    *,
    hidden_size: int = 32,
    head_layers: tuple[int, ...] = (),
    seed: int = 0,
    scheme: str = "uniform-scaled",
) -> SelectorModel:
    """
    Build an initialized selector.
    """
    dims = ModelDims(n_features, n_features, hidden_size, head_layers)
    return SelectorModel(init_params(dims, seed, scheme), dims)


def initial_state(tape: Tape, model: _Network, batch_size: int) -> LstmState:
    """
    Zero hidden and cell states for ``batch_size`` sequences.
    """
    zeros = np.zeros((batch_size, model.dims.hidden_size))
    return LstmState(tape.constant(zeros), tape.constant(zeros))


def _network_input(
    tape: Tape, model: _Network, s_t, x_obs
) -> tuple[NodeRef, int]:
    mask = np.atleast_2d(np.asarray(s_t, dtype=np.float64))
    values = np.atleast_2d(np.asarray(x_obs, dtype=np.float64))
    d = model.dims.n_features
    if mask.shape != values.shape or mask.shape[-1] != d:
        raise ShapeError(
            f"{model.kind} expects mask and values of width {d}, got "
            f"{mask.shape} and {values.shape}"
        )
    # Slots outside the mask read as the sentinel whatever the caller passed.
    values = np.where(mask > 0.5, values, SENTINEL)
    return (
        tape.constant(np.concatenate([values, mask], axis=-1)),
        mask.shape[0],
    )


def _lstm_step(
    tape: Tape,
    refs: Mapping[str, NodeRef],
    cell_params: LstmCellParams,
    state: LstmState,
    x: NodeRef,
) -> LstmState:
    hidden = cell_params.hidden_size
    gates = tape.add(
        tape.add(
            tape.matmul(x, refs["cell.w_input"]),
            tape.matmul(state.hidden, refs["cell.w_hidden"]),
        ),
        refs["cell.bias"],
    )
    input_gate = tape.sigmoid(tape.slice(gates, 0, hidden))
    forget_gate = tape.sigmoid(tape.slice(gates, hidden, 2 * hidden))
    output_gate = tape.sigmoid(tape.slice(gates, 2 * hidden, 3 * hidden))
    candidate = tape.tanh(tape.slice(gates, 3 * hidden, 4 * hidden))
    cell = tape.add(
        tape.mul(forget_gate, state.cell), tape.mul(input_gate, candidate)
    )
    return LstmState(tape.mul(output_gate, tape.tanh(cell)), cell)


def _dense_head(
    tape: Tape, refs: Mapping[str, NodeRef], model: _Network, x: NodeRef
) -> NodeRef:
    n_layers = len(model.dims.head_layers) + 1
    for layer in range(n_layers):
        x = tape.add(
            tape.matmul(x, refs[f"head.{layer}.weight"]),
            refs[f"head.{layer}.bias"],
        )
        if layer < n_layers - 1:
            x = tape.tanh(x)
    return x


def _step(
    model: _Network,
    state: LstmState | None,
    s_t,
    x_obs,
    tape: Tape,
) -> tuple[LstmState, NodeRef]:
    if tape is None:
        raise ValueError("The tape is invalid or null.")
    refs = model.bind(tape)
    x, batch = _network_input(tape, model, s_t, x_obs)
    if state is None:
        state = initial_state(tape, model, batch)
    elif tape.value(state.hidden).shape != (batch, model.dims.hidden_size):
        raise ShapeError(
            f"{model.kind} state shape {tape.value(state.hidden).shape} "
            f"does not match batch {batch}"
        )
    state = _lstm_step(tape, refs, model.cell, state, x)
    return state, _dense_head(tape, refs, model, state.hidden)


def predictor_step(
    model: PredictorModel,
    state: LstmState | None,
    s_t,
    x_obs,
    *,
    tape: Tape,
) -> tuple[LstmState, NodeRef]:
    """
    Advance the predictor by one step.

    :param model: The predictor.
    :param state: Previous state H_{t-1}; None starts from zeros.
    :param s_t: ``(B, d)`` observation mask for this step.
    :param x_obs: ``(B, d)`` observed values, sentinel where unobserved.
    :param tape: Tape the computation is recorded on.
    :return: The new state and a ``(B, k)`` prediction node (softmax
    probabilities for classification).
    """
    state, logits = _step(model, state, s_t, x_obs, tape)
    if model.task is Task.CLASSIFICATION:
        return state, tape.softmax(logits)
    return state, logits


def selector_step(
    model: SelectorModel,
    state: LstmState | None,
    s_t,
    x_obs,
    *,
    tape: Tape,
) -> tuple[LstmState, NodeRef]:
    """
    Advance the selector by one step.

    :return: The new state and ``(B, d)`` measurement probabilities in
    ``[PROB_EPS, 1 - PROB_EPS]``.
    """
    state, logits = _step(model, state, s_t, x_obs, tape)
    return state, tape.clamp(tape.sigmoid(logits), PROB_EPS, 1.0 - PROB_EPS)


def prediction_loss(
    tape: Tape, prediction: NodeRef, y, task: Task | str
) -> NodeRef:
    """
    Per-sample loss: squared error or cross-entropy.

    :param tape: Tape holding ``prediction``.
    :param prediction: ``(B, k)`` (or ``(k,)``) prediction node.
    :param y: ``(B,)`` labels (class indices for classification).
    :param task: Regression or classification.
    :return: ``(B,)`` loss node (scalar for unbatched input).
    """
    task = Task(task)
    predicted = tape.value(prediction)
    labels = np.asarray(y, dtype=np.float64).reshape(predicted.shape[:-1])
    if task is Task.REGRESSION:
        if predicted.shape[-1] != 1:
            raise ShapeError("Regression predictions have one output.")
        diff = tape.add(prediction, tape.constant(-labels[..., None]))
        return tape.sum(tape.square(diff), axis=-1)

    n_classes = predicted.shape[-1]
    classes = labels.astype(np.int64)
    if np.any(classes != labels) or np.any(
        (classes < 0) | (classes >= n_classes)
    ):
        raise ValueError(
            f"Class labels must be integers in [0, {n_classes}), got "
            f"{np.unique(labels)}"
        )
    one_hot = np.eye(n_classes)[classes]
    log_prob = tape.log(tape.clamp(prediction, LOG_CLAMP, 1.0))
    picked = tape.mul(tape.constant(one_hot), log_prob)
    return tape.negate(tape.sum(picked, -1))


def save_model(path: str, model: PredictorModel | SelectorModel) -> None:
    """
    Write a model checkpoint with its metadata.
    """
    save_checkpoint(path, model.params, model.metadata())


def load_model(path: str) -> PredictorModel | SelectorModel:
    """
    Rebuild a model from ``save_model`` output.
    """
    params, metadata = load_checkpoint(path)
    dims = ModelDims(
        metadata["n_features"],
        metadata["n_outputs"],
        metadata["hidden_size"],
        tuple(metadata.get("head_layers", ())),
    )
    expected = parameter_shapes(dims)
    if {k: v.shape for k, v in params.items()} != expected:
        raise ShapeError(f"Checkpoint '{path}' does not match its metadata.")
    if metadata.get("kind") == SelectorModel.kind:
        return SelectorModel(params, dims)
    if metadata.get("kind") == PredictorModel.kind:
        return PredictorModel(params, dims, Task(metadata["task"]))
    raise ValueError(f"Unknown model kind in '{path}'.")
