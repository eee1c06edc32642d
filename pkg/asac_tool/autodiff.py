"""
Reverse-mode automatic differentiation over dense float64 arrays.

Operations are evaluated eagerly and appended to a ``Tape``; ``backward``
walks the tape in reverse and returns the gradient of a scalar output
with respect to every named parameter leaf. The op set is the one needed
to unroll the selector and predictor LSTMs and to differentiate the
log-probability of a sensing decision.
"""

import json
import math
import os
from dataclasses import dataclass, field, replace
from enum import StrEnum
from typing import Any, Callable, Iterable, Mapping

import numpy as np
from scipy.special import expit

from asac_tool.errors import NonFiniteError, ShapeError

NodeRef = int
ParamDict = dict[str, np.ndarray]

CHECKPOINT_FORMAT = "asac-tool-checkpoint"
CHECKPOINT_VERSION = 1


class OpKind(StrEnum):
    """
    Primitive operations that can be recorded on a tape.
    """

    PARAMETER = "parameter"
    CONSTANT = "constant"
    MATMUL = "matmul"
    ADD = "add"
    MUL = "elementwise-mul"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    LOG = "log"
    NEGATE = "negate"
    SUM = "sum"
    CONCAT = "concat"
    SLICE = "slice"
    CLAMP = "clamp"
    SQUARE = "square"
    SOFTMAX = "softmax"


@dataclass(frozen=True)
class Node:
    """
    One recorded operation. ``inputs`` only reference earlier nodes.
    """

    kind: OpKind
    inputs: tuple[NodeRef, ...]
    attributes: Mapping[str, Any] = field(default_factory=dict)
    name: str | None = None
    requires_grad: bool = False


def _as_array(value) -> np.ndarray:
    array = np.array(value, dtype=np.float64)
    array.setflags(write=False)
    return array


def _shape_error(kind: OpKind, *shapes) -> ShapeError:
    rendered = ", ".join(str(tuple(s)) for s in shapes)
    return ShapeError(f"Shape mismatch in '{kind}': {rendered}")


def _forward_matmul(attrs, a, b):
    del attrs
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise _shape_error(OpKind.MATMUL, a.shape, b.shape)
    inner_b = b.shape[0]
    if a.shape[-1] != inner_b:
        raise _shape_error(OpKind.MATMUL, a.shape, b.shape)
    return a @ b


def _forward_broadcast(kind: OpKind, op: Callable):
    def forward(attrs, a, b):
        del attrs
        try:
            np.broadcast_shapes(a.shape, b.shape)
        except ValueError as exc:
            raise _shape_error(kind, a.shape, b.shape) from exc
        return op(a, b)

    return forward


def _forward_log(attrs, x):
    del attrs
    if np.any(x <= 0.0):
        raise NonFiniteError(
            "Non-finite value in 'log': input must be strictly positive"
        )
    return np.log(x)


def _forward_sum(attrs, x):
    return np.sum(x, axis=attrs.get("axis"))


def _forward_concat(attrs, *xs):
    axis = attrs.get("axis", -1)
    try:
        return np.concatenate(xs, axis=axis)
    except ValueError as exc:
        raise _shape_error(OpKind.CONCAT, *(x.shape for x in xs)) from exc


def _forward_slice(attrs, x):
    start, stop = attrs["start"], attrs["stop"]
    if x.ndim == 0 or not 0 <= start < stop <= x.shape[-1]:
        raise ShapeError(
            f"Shape mismatch in 'slice': [{start}:{stop}] of {x.shape}"
        )
    return x[..., start:stop]


def _forward_clamp(attrs, x):
    return np.clip(x, attrs["lo"], attrs["hi"])


def _forward_softmax(attrs, x):
    del attrs
    shifted = x - np.max(x, axis=-1, keepdims=True)
    exps = np.exp(shifted)
    return exps / np.sum(exps, axis=-1, keepdims=True)


_FORWARD: dict[OpKind, Callable] = {
    OpKind.MATMUL: _forward_matmul,
    OpKind.ADD: _forward_broadcast(OpKind.ADD, np.add),
    OpKind.MUL: _forward_broadcast(OpKind.MUL, np.multiply),
    OpKind.SIGMOID: lambda attrs, x: expit(x),
    OpKind.TANH: lambda attrs, x: np.tanh(x),
    OpKind.LOG: _forward_log,
    OpKind.NEGATE: lambda attrs, x: -x,
    OpKind.SUM: _forward_sum,
    OpKind.CONCAT: _forward_concat,
    OpKind.SLICE: _forward_slice,
    OpKind.CLAMP: _forward_clamp,
    OpKind.SQUARE: lambda attrs, x: np.square(x),
    OpKind.SOFTMAX: _forward_softmax,
}

_ARITY: dict[OpKind, int | None] = {
    OpKind.MATMUL: 2,
    OpKind.ADD: 2,
    OpKind.MUL: 2,
    OpKind.CONCAT: None,
}


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """
    Sum ``grad`` down to ``shape`` after numpy broadcasting.
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _backward_matmul(node, inputs, output, grad):
    del node, output
    a, b = inputs
    if a.ndim == 2 and b.ndim == 2:
        return grad @ b.T, a.T @ grad
    if a.ndim == 2:
        return np.outer(grad, b), a.T @ grad
    if b.ndim == 2:
        return b @ grad, np.outer(a, grad)
    return grad * b, grad * a


def _backward_add(node, inputs, output, grad):
    del node, output
    return tuple(_unbroadcast(grad, x.shape) for x in inputs)


def _backward_mul(node, inputs, output, grad):
    del node, output
    a, b = inputs
    return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)


def _backward_sum(node, inputs, output, grad):
    del output
    (x,) = inputs
    axis = node.attributes.get("axis")
    if axis is not None:
        grad = np.expand_dims(grad, axis)
    return (np.broadcast_to(grad, x.shape).copy(),)


def _backward_concat(node, inputs, output, grad):
    del output
    axis = node.attributes.get("axis", -1)
    bounds = np.cumsum([x.shape[axis] for x in inputs])[:-1]
    return tuple(np.split(grad, bounds, axis=axis))


def _backward_slice(node, inputs, output, grad):
    del output
    (x,) = inputs
    full = np.zeros_like(x)
    full[..., node.attributes["start"] : node.attributes["stop"]] = grad
    return (full,)


def _backward_clamp(node, inputs, output, grad):
    del output
    (x,) = inputs
    lo, hi = node.attributes["lo"], node.attributes["hi"]
    return (grad * ((x >= lo) & (x <= hi)),)


def _backward_softmax(node, inputs, output, grad):
    del node, inputs
    inner = np.sum(grad * output, axis=-1, keepdims=True)
    return (output * (grad - inner),)


_BACKWARD: dict[OpKind, Callable] = {
    OpKind.MATMUL: _backward_matmul,
    OpKind.ADD: _backward_add,
    OpKind.MUL: _backward_mul,
    OpKind.SIGMOID: lambda n, i, y, g: (g * y * (1.0 - y),),
    OpKind.TANH: lambda n, i, y, g: (g * (1.0 - y * y),),
    OpKind.LOG: lambda n, i, y, g: (g / i[0],),
    OpKind.NEGATE: lambda n, i, y, g: (-g,),
    OpKind.SUM: _backward_sum,
    OpKind.CONCAT: _backward_concat,
    OpKind.SLICE: _backward_slice,
    OpKind.CLAMP: _backward_clamp,
    OpKind.SQUARE: lambda n, i, y, g: (2.0 * i[0] * g,),
    OpKind.SOFTMAX: _backward_softmax,
}


class Tape:
    """
    An append-only record of eagerly evaluated operations.

    A tape is single-threaded. Stored values are read-only arrays, so a
    backward pass can never alter them.
    """

    def __init__(self):
        self._nodes: list[Node] = []
        self._values: list[np.ndarray] = []
        self._adjoints: list[np.ndarray] | None = None
        self._parameters: dict[str, NodeRef] = {}

    @property
    def nodes(self) -> list[Node]:
        """
        The recorded nodes in topological order.
        """
        return self._nodes

    @property
    def parameters(self) -> dict[str, NodeRef]:
        """
        Parameter names mapped to their leaf nodes.
        """
        return dict(self._parameters)

    def __len__(self) -> int:
        return len(self._nodes)

    def _append(self, node: Node, value: np.ndarray) -> NodeRef:
        self._nodes.append(node)
        self._values.append(value)
        self._adjoints = None
        return len(self._nodes) - 1

    def parameter(self, name: str, value) -> NodeRef:
        """
        Register a trainable leaf. Registering the same name twice
        returns the existing node.
        :param name: Unique parameter name.
        :param value: The parameter array.
        :return: The node reference.
        """
        if not name:
            raise ValueError("The parameter name is invalid or null.")
        if name in self._parameters:
            return self._parameters[name]
        array = _as_array(value)
        if not np.all(np.isfinite(array)):
            raise NonFiniteError(f"Non-finite value in parameter '{name}'")
        ref = self._append(
            Node(OpKind.PARAMETER, (), name=name, requires_grad=True), array
        )
        self._parameters[name] = ref
        return ref

    def constant(self, value) -> NodeRef:
        """
        Register a non-trainable leaf.
        """
        array = _as_array(value)
        if not np.all(np.isfinite(array)):
            raise NonFiniteError("Non-finite value in constant")
        return self._append(Node(OpKind.CONSTANT, ()), array)

    def record(
        self, kind: OpKind | str, inputs: Iterable[NodeRef], **attributes
    ) -> NodeRef:
        """
        Evaluate a primitive operation and append it to the tape.
        :param kind: The operation kind.
        :param inputs: References to earlier nodes.
        :param attributes: Operation attributes (axis, start/stop, lo/hi).
        :return: Reference to the new node.
        """
        kind = OpKind(kind)
        if kind in (OpKind.PARAMETER, OpKind.CONSTANT):
            raise ValueError(f"'{kind}' nodes are created by {kind}()")
        inputs = tuple(inputs)
        expected = _ARITY.get(kind, 1)
        if expected is not None and len(inputs) != expected:
            raise ValueError(
                f"'{kind}' expects {expected} input(s), got {len(inputs)}"
            )
        if not inputs:
            raise ValueError(f"'{kind}' requires at least one input")
        for ref in inputs:
            if not 0 <= ref < len(self._nodes):
                raise ValueError(f"Unknown node reference {ref} in '{kind}'")

        value = _FORWARD[kind](attributes, *(self._values[i] for i in inputs))
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"Non-finite value produced by '{kind}'")
        value.setflags(write=False)
        requires_grad = any(self._nodes[i].requires_grad for i in inputs)
        return self._append(
            Node(kind, inputs, dict(attributes), requires_grad=requires_grad),
            value,
        )

    def value(self, ref: NodeRef) -> np.ndarray:
        """
        The forward value of a node.
        """
        return self._values[ref]

    def adjoint(self, ref: NodeRef) -> np.ndarray:
        """
        The adjoint of a node from the last backward pass.
        """
        if self._adjoints is None:
            raise ValueError("backward() has not been run on this tape")
        return self._adjoints[ref]

    def backward(self, output: NodeRef) -> ParamDict:
        """
        Back-propagate from a scalar-shaped node.

        :param output: The node to differentiate; it must hold one element.
        :return: Gradient of ``output`` for every registered parameter,
        keyed by parameter name. Unreached parameters get zeros.
        """
        out_value = self._values[output]
        if out_value.size != 1:
            raise ShapeError(
                "backward() needs a scalar output, "
                f"got shape {out_value.shape}"
            )

        adjoints: list[np.ndarray | None] = [None] * len(self._nodes)
        adjoints[output] = np.ones_like(out_value)

        for ref in range(output, -1, -1):
            grad = adjoints[ref]
            node = self._nodes[ref]
            if grad is None or not node.inputs:
                continue
            input_grads = _BACKWARD[node.kind](
                node,
                [self._values[i] for i in node.inputs],
                self._values[ref],
                grad,
            )
            for i, input_grad in zip(node.inputs, input_grads):
                if not self._nodes[i].requires_grad:
                    continue
                if adjoints[i] is None:
                    adjoints[i] = np.array(input_grad, dtype=np.float64)
                else:
                    adjoints[i] = adjoints[i] + input_grad

        self._adjoints = [
            np.zeros_like(self._values[i]) if adj is None else adj
            for i, adj in enumerate(adjoints)
        ]
        return {
            name: self._adjoints[ref]
            for name, ref in self._parameters.items()
        }

    # Shorthands for the primitive set.

    def matmul(self, a: NodeRef, b: NodeRef) -> NodeRef:
        return self.record(OpKind.MATMUL, (a, b))

    def add(self, a: NodeRef, b: NodeRef) -> NodeRef:
        return self.record(OpKind.ADD, (a, b))

    def mul(self, a: NodeRef, b: NodeRef) -> NodeRef:
        return self.record(OpKind.MUL, (a, b))

    def sigmoid(self, x: NodeRef) -> NodeRef:
        return self.record(OpKind.SIGMOID, (x,))

    def tanh(self, x: NodeRef) -> NodeRef:
        return self.record(OpKind.TANH, (x,))

    def log(self, x: NodeRef) -> NodeRef:
        return self.record(OpKind.LOG, (x,))

    def negate(self, x: NodeRef) -> NodeRef:
        return self.record(OpKind.NEGATE, (x,))

    def sum(self, x: NodeRef, axis: int | None = None) -> NodeRef:
        return self.record(OpKind.SUM, (x,), axis=axis)

    def concat(self, xs: Iterable[NodeRef], axis: int = -1) -> NodeRef:
        return self.record(OpKind.CONCAT, tuple(xs), axis=axis)

    def slice(self, x: NodeRef, start: int, stop: int) -> NodeRef:
        return self.record(OpKind.SLICE, (x,), start=start, stop=stop)

    def clamp(self, x: NodeRef, lo: float, hi: float) -> NodeRef:
        return self.record(OpKind.CLAMP, (x,), lo=lo, hi=hi)

    def square(self, x: NodeRef) -> NodeRef:
        return self.record(OpKind.SQUARE, (x,))

    def softmax(self, x: NodeRef) -> NodeRef:
        return self.record(OpKind.SOFTMAX, (x,))


def record(
    tape: Tape, kind: OpKind | str, inputs: Iterable[NodeRef], **attributes
) -> NodeRef:
    """
    Record ``kind`` applied to ``inputs`` on ``tape``.
    """
    return tape.record(kind, inputs, **attributes)


def backward(tape: Tape, output: NodeRef) -> ParamDict:
    """
    Back-propagate from a scalar-shaped node.

    :param tape: The tape holding the graph.
    :param output: The node to differentiate; it must hold one element.
    :return: Gradient of ``output`` keyed by parameter name.
    """
    if tape is None:
        raise ValueError("The tape is invalid or null.")
    return tape.backward(output)


@dataclass(frozen=True)
class OptimizerState:
    """
    Learning rate, moment decays and per-parameter accumulators.

    ``step_count`` counts applied updates. Adam uses both accumulators;
    plain SGD leaves them empty.
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: Mapping[str, np.ndarray] = field(default_factory=dict)
    second_moment: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("'learning_rate' must be positive.")
        if self.step_count < 0:
            raise ValueError("'step_count' must not be negative.")


def _check_gradients(params: Mapping, grads: Mapping) -> None:
    if set(params) != set(grads):
        raise ShapeError(
            "Gradient blocks do not match parameter blocks: "
            f"{sorted(set(params) ^ set(grads))}"
        )
    for name, value in params.items():
        grad = grads[name]
        if np.shape(grad) != np.shape(value):
            raise ShapeError(
                f"Gradient for '{name}' has shape {np.shape(grad)}, "
                f"expected {np.shape(value)}"
            )
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"Non-finite gradient in block '{name}'")


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
) -> tuple[ParamDict, OptimizerState]:
    """
    Apply one bias-corrected Adam update.

    :return: New parameter arrays and the advanced optimizer state.
    Inputs are left untouched.
    """
    _check_gradients(params, grads)
    step = state.step_count + 1
    first, second, updated = {}, {}, {}
    for name, value in params.items():
        grad = np.asarray(grads[name], dtype=np.float64)
        m = state.first_moment.get(name, np.zeros_like(value))
        v = state.second_moment.get(name, np.zeros_like(value))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        m_hat = m / (1.0 - state.beta1**step)
        v_hat = v / (1.0 - state.beta2**step)
        updated[name] = value - state.learning_rate * m_hat / (
            np.sqrt(v_hat) + state.epsilon
        )
        first[name], second[name] = m, v
    return updated, replace(
        state, step_count=step, first_moment=first, second_moment=second
    )


def sgd_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
) -> tuple[ParamDict, OptimizerState]:
    """
    Apply one plain gradient-descent update.
    """
    _check_gradients(params, grads)
    updated = {
        name: value - state.learning_rate * np.asarray(grads[name])
        for name, value in params.items()
    }
    return updated, replace(state, step_count=state.step_count + 1)


_STEP_FUNCTIONS = {"adam": adam_step, "sgd": sgd_step}


class Optimizer:
    """
    Holds an ``OptimizerState`` and applies the chosen update rule.
    """

    def __init__(self, kind: str = "adam", learning_rate: float = 1e-3):
        if kind not in _STEP_FUNCTIONS:
            raise ValueError(f"Unknown optimizer '{kind}'.")
        self.kind = kind
        self.state = OptimizerState(learning_rate=learning_rate)

    def step(
        self,
        params: Mapping[str, np.ndarray],
        grads: Mapping[str, np.ndarray],
    ) -> ParamDict:
        """
        Update ``params`` with ``grads`` and advance the state.
        """
        updated, self.state = _STEP_FUNCTIONS[self.kind](
            params, grads, self.state
        )
        return updated


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    """
    Euclidean norm over every gradient block.
    """
    return math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))


def clip_by_global_norm(
    grads: Mapping[str, np.ndarray], max_norm: float
) -> tuple[ParamDict, float]:
    """
    Rescale ``grads`` so their global norm is at most ``max_norm``.
    A non-positive or infinite ``max_norm`` disables clipping.
    :return: The (possibly rescaled) gradients and the original norm.
    """
    norm = global_norm(grads)
    if max_norm <= 0 or math.isinf(max_norm) or norm <= max_norm:
        return dict(grads), norm
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}, norm


def save_checkpoint(
    path: str,
    params: Mapping[str, np.ndarray],
    metadata: Mapping[str, Any] | None = None,
) -> None:
    """
    Write parameters as JSON ``(name, shape, values)`` records.

    Floats are written with ``repr``, which round-trips every float64
    exactly (at most 17 significant digits).
    """
    if not path:
        raise ValueError("The checkpoint path is invalid or null.")
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "metadata": dict(metadata or {}),
        "parameters": [
            {
                "name": name,
                "shape": list(np.shape(params[name])),
                "values": [float(v) for v in np.ravel(params[name])],
            }
            for name in sorted(params)
        ],
    }
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as file:
        json.dump(document, file, indent=1)


def load_checkpoint(path: str) -> tuple[ParamDict, dict[str, Any]]:
    """
    Read a checkpoint written by ``save_checkpoint``.
    :return: The parameters and the metadata mapping.
    """
    with open(path, "r", encoding="utf-8") as file:
        document = json.load(file)
    if document.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"'{path}' is not an {CHECKPOINT_FORMAT} file.")
    params = {}
    for entry in document["parameters"]:
        shape = tuple(entry["shape"])
        values = np.array(entry["values"], dtype=np.float64)
        if values.size != int(np.prod(shape, dtype=np.int64)):
            raise ShapeError(
                f"Checkpoint block '{entry['name']}' has {values.size} "
                f"values for shape {shape}"
            )
        params[entry["name"]] = values.reshape(shape)
    return params, document.get("metadata", {})
