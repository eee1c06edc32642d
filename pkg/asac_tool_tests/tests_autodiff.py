"""
Tests: Autodiff
"""

import os
import tempfile
import unittest

import numpy as np

from asac_tool.autodiff import (
    OpKind,
    Optimizer,
    OptimizerState,
    Tape,
    adam_step,
    backward,
    clip_by_global_norm,
    global_norm,
    load_checkpoint,
    record,
    save_checkpoint,
    sgd_step,
)
from asac_tool.errors import NonFiniteError, ShapeError
from asac_tool_tests.fixtures import numeric_gradient


class TestTapeForward(unittest.TestCase):
    """
    Unit tests for recording operations on a `Tape`.
    """

    def test_matmul_and_add_values(self):
        """
        Test eager evaluation of `matmul` followed by a broadcast `add`.

        :assert: The stored value equals the numpy result.
        """
        tape = Tape()
        a = tape.constant([[1.0, 2.0], [3.0, 4.0]])
        b = tape.constant([[1.0], [1.0]])
        out = tape.add(tape.matmul(a, b), tape.constant([0.5]))
        np.testing.assert_array_equal(tape.value(out), [[3.5], [7.5]])

    def test_record_function_matches_method(self):
        """
        Test the module-level `record` helper.

        :assert: It produces the same value as the shorthand method.
        """
        tape = Tape()
        x = tape.constant([0.0, 1.0])
        self.assertTrue(
            np.array_equal(
                tape.value(record(tape, OpKind.TANH, (x,))),
                tape.value(tape.tanh(x)),
            )
        )

    def test_shape_mismatch_raises(self):
        """
        Test `matmul` with incompatible inner dimensions.

        :assert: ShapeError is raised.
        """
        tape = Tape()
        a = tape.constant(np.ones((2, 3)))
        b = tape.constant(np.ones((2, 3)))
        with self.assertRaises(ShapeError):
            tape.matmul(a, b)

    def test_log_of_zero_raises(self):
        """
        Test `log` on a non-positive input.

        :assert: NonFiniteError is raised.
        """
        tape = Tape()
        with self.assertRaises(NonFiniteError):
            tape.log(tape.constant([1.0, 0.0]))

    def test_values_are_read_only(self):
        """
        Test that recorded values cannot be modified.

        :assert: Writing to a stored value raises ValueError.
        """
        tape = Tape()
        ref = tape.square(tape.constant([1.0, 2.0]))
        with self.assertRaises(ValueError):
            tape.value(ref)[0] = 5.0

    def test_parameter_registration_is_idempotent(self):
        """
        Test registering the same parameter name twice.

        :assert: The same node reference is returned.
        """
        tape = Tape()
        first = tape.parameter("w", [1.0])
        second = tape.parameter("w", [2.0])
        self.assertEqual(first, second)
        self.assertEqual(tape.parameters, {"w": first})

    def test_wrong_arity_raises(self):
        """
        Test recording a binary op with one input.

        :assert: ValueError is raised.
        """
        tape = Tape()
        x = tape.constant([1.0])
        with self.assertRaises(ValueError):
            tape.record(OpKind.ADD, (x,))

    def test_softmax_rows_sum_to_one(self):
        """
        Test softmax over the last axis with large logits.

        :assert: Rows sum to one and stay finite.
        """
        tape = Tape()
        out = tape.softmax(tape.constant([[1000.0, 0.0], [1.0, 2.0]]))
        np.testing.assert_allclose(tape.value(out).sum(axis=-1), 1.0)


class TestTapeBackward(unittest.TestCase):
    """
    Unit tests for `Tape.backward`.
    """

    def _check(self, build, value):
        """
        Compare tape gradients of ``build`` with finite differences.
        """

        def scalar(x):
            tape = Tape()
            return float(tape.value(build(tape, tape.parameter("x", x))))

        tape = Tape()
        output = build(tape, tape.parameter("x", value))
        analytic = backward(tape, output)["x"]
        numeric = numeric_gradient(scalar, value)
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-7)

    def test_elementwise_ops(self):
        """
        Test gradients of the unary primitives.

        :assert: Each agrees with central differences.
        """
        x = np.array([0.3, 0.7, 1.4])
        for op in ("sigmoid", "tanh", "log", "negate", "square"):
            with self.subTest(op=op):
                self._check(
                    lambda tape, ref, op=op: tape.sum(getattr(tape, op)(ref)),
                    x,
                )

    def test_broadcast_mul_and_add(self):
        """
        Test gradients through broadcasting `mul` and `add`.

        :assert: The bias-like parameter receives summed gradients.
        """
        rows = np.array([[1.0, -2.0], [0.5, 3.0], [2.0, 1.0]])

        def build(tape, ref):
            scaled = tape.mul(tape.constant(rows), ref)
            shifted = tape.add(scaled, ref)
            return tape.sum(tape.square(shifted))

        self._check(build, np.array([0.2, -0.4]))

    def test_matmul_slice_concat(self):
        """
        Test gradients through `matmul`, `slice` and `concat`.

        :assert: Gradients agree with central differences.
        """
        left = np.array([[1.0, 2.0, -1.0], [0.0, 1.0, 3.0]])

        def build(tape, ref):
            product = tape.matmul(tape.constant(left), ref)
            joined = tape.concat(
                [tape.slice(product, 0, 1), tape.tanh(product)], axis=-1
            )
            return tape.sum(tape.square(joined))

        self._check(build, np.array([[0.1, 0.2], [0.3, -0.1], [0.5, 0.4]]))

    def test_softmax_and_axis_sum(self):
        """
        Test gradients through `softmax` and a per-row `sum`.

        :assert: Gradients agree with central differences.
        """
        weights = np.array([[1.0, 2.0, 3.0], [-1.0, 0.5, 2.0]])

        def build(tape, ref):
            probs = tape.softmax(ref)
            per_row = tape.sum(tape.mul(tape.constant(weights), probs), -1)
            return tape.sum(tape.square(per_row))

        self._check(build, np.array([[0.1, -0.3, 0.2], [1.0, 0.0, -1.0]]))

    def test_clamp_blocks_gradient_outside_range(self):
        """
        Test `clamp` gradients.

        :assert: Entries outside [lo, hi] get a zero gradient.
        """
        tape = Tape()
        x = tape.parameter("x", [-2.0, 0.5, 2.0])
        grads = tape.backward(tape.sum(tape.clamp(x, -1.0, 1.0)))
        np.testing.assert_array_equal(grads["x"], [0.0, 1.0, 0.0])

    def test_unreached_parameter_gets_zeros(self):
        """
        Test a parameter that does not feed the output.

        :assert: Its gradient is an all-zero array of its shape.
        """
        tape = Tape()
        used = tape.parameter("used", [1.0, 2.0])
        tape.parameter("unused", np.ones((2, 2)))
        grads = tape.backward(tape.sum(used))
        np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))

    def test_backward_requires_scalar(self):
        """
        Test `backward` from a vector node.

        :assert: ShapeError is raised.
        """
        tape = Tape()
        x = tape.parameter("x", [1.0, 2.0])
        with self.assertRaises(ShapeError):
            tape.backward(tape.square(x))

    def test_adjoint_before_backward_raises(self):
        """
        Test reading an adjoint before any backward pass.

        :assert: ValueError is raised.
        """
        tape = Tape()
        x = tape.parameter("x", [1.0])
        with self.assertRaises(ValueError):
            tape.adjoint(x)


class TestOptimizers(unittest.TestCase):
    """
    Unit tests for `adam_step`, `sgd_step` and clipping.
    """

    def test_adam_first_step_moves_by_learning_rate(self):
        """
        Test the first bias-corrected Adam step.

        :assert: Every entry moves by the learning rate against the
        gradient sign, and the inputs are untouched.
        """
        params = {"w": np.array([1.0, -1.0, 0.5])}
        grads = {"w": np.array([0.3, -2.0, 10.0])}
        state = OptimizerState(learning_rate=0.01)
        updated, new_state = adam_step(params, grads, state)
        np.testing.assert_allclose(
            updated["w"], [0.99, -0.99, 0.49], rtol=0, atol=1e-7
        )
        self.assertEqual(new_state.step_count, 1)
        self.assertEqual(state.step_count, 0)
        np.testing.assert_array_equal(params["w"], [1.0, -1.0, 0.5])

    def test_adam_zero_gradient_keeps_params(self):
        """
        Test an Adam step from a fresh state with a zero gradient.

        :assert: The parameters are unchanged and the step counter
        advances by one.
        """
        params = {"w": np.array([[1.0, -2.0], [0.25, 3.0]]), "b": np.ones(2)}
        grads = {name: np.zeros_like(value) for name, value in params.items()}
        updated, state = adam_step(params, grads, OptimizerState())
        for name, value in params.items():
            np.testing.assert_array_equal(updated[name], value)
        self.assertEqual(state.step_count, 1)

    def test_sgd_step(self):
        """
        Test plain gradient descent.

        :assert: params - lr * grads.
        """
        updated, _ = sgd_step(
            {"w": np.array([1.0])},
            {"w": np.array([2.0])},
            OptimizerState(learning_rate=0.5),
        )
        np.testing.assert_array_equal(updated["w"], [0.0])

    def test_non_finite_gradient_names_block(self):
        """
        Test an optimizer step with a NaN gradient.

        :assert: NonFiniteError names the offending block.
        """
        with self.assertRaises(NonFiniteError) as context:
            adam_step(
                {"cell.bias": np.zeros(2)},
                {"cell.bias": np.array([np.nan, 0.0])},
                OptimizerState(),
            )
        self.assertIn("cell.bias", str(context.exception))

    def test_mismatched_gradient_shape_raises(self):
        """
        Test an optimizer step with a wrongly shaped gradient.

        :assert: ShapeError is raised.
        """
        with self.assertRaises(ShapeError):
            Optimizer("sgd", 0.1).step({"w": np.zeros(2)}, {"w": np.zeros(3)})

    def test_clip_by_global_norm(self):
        """
        Test clipping to a maximum global norm.

        :assert: The clipped norm equals the maximum and the original
        norm is reported; a non-positive maximum disables clipping.
        """
        grads = {"a": np.array([3.0]), "b": np.array([4.0])}
        clipped, norm = clip_by_global_norm(grads, 1.0)
        self.assertAlmostEqual(norm, 5.0)
        self.assertAlmostEqual(global_norm(clipped), 1.0)
        unclipped, _ = clip_by_global_norm(grads, 0.0)
        np.testing.assert_array_equal(unclipped["a"], [3.0])


class TestParameterIo(unittest.TestCase):
    """
    Unit tests for checkpoints.
    """

    def test_checkpoint_round_trip(self):
        """
        Test saving and loading a checkpoint.

        :assert: Values are bit-identical and metadata is preserved.
        """
        rng = np.random.default_rng(3)
        params = {"w": rng.standard_normal((3, 2)), "b": rng.random(2)}
        with tempfile.TemporaryDirectory() as directory:
            path = os.path.join(directory, "model.json")
            save_checkpoint(path, params, {"kind": "selector"})
            loaded, metadata = load_checkpoint(path)
        self.assertEqual(metadata, {"kind": "selector"})
        for name, value in params.items():
            np.testing.assert_array_equal(loaded[name], value)


if __name__ == "__main__":
    unittest.main()
