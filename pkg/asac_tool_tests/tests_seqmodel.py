"""
Tests: Sequence models
"""

import os
import tempfile
import unittest

import numpy as np

from asac_tool import PROB_EPS
from asac_tool.autodiff import Tape
from asac_tool.errors import ShapeError
from asac_tool.sensing import decision_log_prob
from asac_tool.seqmodel import (
    FORGET_GATE_BIAS,
    ModelDims,
    init_params,
    load_model,
    make_predictor,
    make_selector,
    parameter_shapes,
    prediction_loss,
    predictor_step,
    save_model,
    selector_step,
)
from asac_tool.types import Task
from asac_tool_tests.fixtures import numeric_gradient

N_FEATURES, HIDDEN, STEPS, BATCH = 3, 4, 3, 2


def _random_inputs(seed: int):
    rng = np.random.default_rng(seed)
    masks = (rng.random((STEPS, BATCH, N_FEATURES)) < 0.6).astype(float)
    values = rng.standard_normal((STEPS, BATCH, N_FEATURES)) * masks
    return masks, values


def _predictor_objective(model, masks, values, labels):
    tape = Tape()
    state, total = None, None
    for t in range(STEPS):
        state, prediction = predictor_step(
            model, state, masks[t], values[t], tape=tape
        )
        loss = tape.sum(
            prediction_loss(tape, prediction, labels[t], model.task)
        )
        total = loss if total is None else tape.add(total, loss)
    return tape, total


def _selector_objective(model, masks, values, decisions):
    tape = Tape()
    state, total = None, None
    for t in range(STEPS):
        state, probs = selector_step(
            model, state, masks[t], values[t], tape=tape
        )
        log_prob = tape.sum(decision_log_prob(tape, probs, decisions[t]))
        total = log_prob if total is None else tape.add(total, log_prob)
    return tape, total


class TestParameters(unittest.TestCase):
    """
    Unit tests for parameter shapes and initialization.
    """

    def test_parameter_shapes(self):
        """
        Test the block shapes for a two-layer head.

        :assert: The LSTM input is 2d wide and the head chains widths.
        """
        shapes = parameter_shapes(ModelDims(3, 1, 4, (5,)))
        self.assertEqual(shapes["cell.w_input"], (6, 16))
        self.assertEqual(shapes["cell.w_hidden"], (4, 16))
        self.assertEqual(shapes["cell.bias"], (16,))
        self.assertEqual(shapes["head.0.weight"], (4, 5))
        self.assertEqual(shapes["head.1.weight"], (5, 1))
        self.assertEqual(shapes["head.1.bias"], (1,))

    def test_init_is_reproducible(self):
        """
        Test `init_params` with a fixed seed.

        :assert: Same seed gives identical arrays; the forget-gate bias
        is set.
        """
        dims = ModelDims(2, 2, 3)
        first, second = init_params(dims, 11), init_params(dims, 11)
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])
        np.testing.assert_array_equal(
            first["cell.bias"][3:6], np.full(3, FORGET_GATE_BIAS)
        )

    def test_zeros_scheme(self):
        """
        Test the all-zero initialization.

        :assert: Every block is zero.
        """
        params = init_params(ModelDims(2, 1, 3), 0, scheme="zeros")
        self.assertTrue(all(not np.any(v) for v in params.values()))

    def test_unknown_scheme_raises(self):
        """
        Test an unknown initialization scheme.

        :assert: ValueError is raised.
        """
        with self.assertRaises(ValueError):
            init_params(ModelDims(2, 1, 3), 0, scheme="normal")


class TestSteps(unittest.TestCase):
    """
    Unit tests for `predictor_step` and `selector_step`.
    """

    def test_selector_probabilities_are_clamped(self):
        """
        Test selector outputs with saturating weights.

        :assert: Probabilities stay within [eps, 1 - eps].
        """
        selector = make_selector(N_FEATURES, hidden_size=HIDDEN, seed=1)
        params = dict(selector.params)
        params["head.0.bias"] = np.array([100.0, -100.0, 0.0])
        selector = selector.with_params(params)
        tape = Tape()
        _, probs = selector_step(
            selector,
            None,
            np.zeros((1, N_FEATURES)),
            np.zeros((1, N_FEATURES)),
            tape=tape,
        )
        value = tape.value(probs)
        self.assertAlmostEqual(value[0, 0], 1.0 - PROB_EPS)
        self.assertAlmostEqual(value[0, 1], PROB_EPS)

    def test_classification_outputs_distribution(self):
        """
        Test the classification head.

        :assert: Rows are probability vectors over the classes.
        """
        predictor = make_predictor(
            N_FEATURES, task="classification", n_classes=3, hidden_size=HIDDEN
        )
        tape = Tape()
        _, probs = predictor_step(
            predictor,
            None,
            np.ones((2, N_FEATURES)),
            np.ones((2, N_FEATURES)),
            tape=tape,
        )
        np.testing.assert_allclose(tape.value(probs).sum(axis=-1), 1.0)

    def test_first_decision_reaches_later_state(self):
        """
        Test that the predictor state carries earlier observations.

        :assert: Changing only the first step's mask changes the hidden
        state after the third step.
        """
        predictor = make_predictor(N_FEATURES, hidden_size=HIDDEN, seed=4)
        masks, values = _random_inputs(8)
        flipped = masks.copy()
        flipped[0] = 1.0 - flipped[0]
        hidden = []
        for step_masks in (masks, flipped):
            tape, state = Tape(), None
            for t in range(STEPS):
                state, _ = predictor_step(
                    predictor, state, step_masks[t], values[t], tape=tape
                )
            hidden.append(tape.value(state.hidden))
        self.assertFalse(np.allclose(hidden[0], hidden[1]))

    def test_selector_ignores_values_behind_mask(self):
        """
        Test selector outputs when unmeasured slots hold arbitrary values.

        :assert: Probabilities are identical at every step.
        """
        selector = make_selector(N_FEATURES, hidden_size=HIDDEN, seed=6)
        masks, values = _random_inputs(9)
        rng = np.random.default_rng(10)
        hidden_values = np.where(
            masks > 0, values, rng.standard_normal(values.shape) * 100.0
        )
        self.assertFalse(np.array_equal(values, hidden_values))
        outputs = []
        for step_values in (values, hidden_values):
            tape, state, probs = Tape(), None, []
            for t in range(STEPS):
                state, ref = selector_step(
                    selector, state, masks[t], step_values[t], tape=tape
                )
                probs.append(tape.value(ref))
            outputs.append(np.stack(probs))
        np.testing.assert_array_equal(outputs[0], outputs[1])

    def test_inconsistent_cell_shapes_raise(self):
        """
        Test a predictor whose LSTM bias has the wrong width.

        :assert: ShapeError is raised.
        """
        predictor = make_predictor(N_FEATURES, hidden_size=HIDDEN)
        params = {**predictor.params, "cell.bias": np.zeros(4 * HIDDEN + 1)}
        with self.assertRaises(ShapeError):
            predictor_step(
                predictor.with_params(params),
                None,
                np.ones((1, N_FEATURES)),
                np.ones((1, N_FEATURES)),
                tape=Tape(),
            )

    def test_width_mismatch_raises(self):
        """
        Test a step with the wrong feature count.

        :assert: ShapeError is raised.
        """
        predictor = make_predictor(N_FEATURES, hidden_size=HIDDEN)
        with self.assertRaises(ShapeError):
            predictor_step(
                predictor, None, np.ones((1, 2)), np.ones((1, 2)), tape=Tape()
            )

    def test_class_label_out_of_range_raises(self):
        """
        Test cross-entropy with an invalid class label.

        :assert: ValueError is raised.
        """
        tape = Tape()
        probs = tape.constant([[0.5, 0.5]])
        with self.assertRaises(ValueError):
            prediction_loss(tape, probs, [2], Task.CLASSIFICATION)


class TestGradients(unittest.TestCase):
    """
    Gradient checks of both networks against central differences.
    """

    def _assert_matches_numeric(self, model, objective):
        tape, output = objective(model)
        analytic = model.gradients(tape.backward(output))
        for name, value in model.params.items():

            def scalar(perturbed, name=name):
                params = {**model.params, name: perturbed}
                inner_tape, inner = objective(model.with_params(params))
                return float(inner_tape.value(inner))

            with self.subTest(block=name):
                np.testing.assert_allclose(
                    analytic[name],
                    numeric_gradient(scalar, value),
                    rtol=1e-3,
                    atol=1e-6,
                )

    def test_regression_loss_gradient(self):
        """
        Test the squared-error loss gradient over an unrolled sequence.

        :assert: Every block agrees with central differences.
        """
        masks, values = _random_inputs(0)
        labels = np.random.default_rng(1).standard_normal((STEPS, BATCH))
        predictor = make_predictor(
            N_FEATURES, hidden_size=HIDDEN, head_layers=(3,), seed=2
        )
        self._assert_matches_numeric(
            predictor,
            lambda m: _predictor_objective(m, masks, values, labels),
        )

    def test_classification_loss_gradient(self):
        """
        Test the cross-entropy loss gradient over an unrolled sequence.

        :assert: Every block agrees with central differences.
        """
        masks, values = _random_inputs(3)
        labels = np.array([[0, 1], [1, 1], [0, 0]])
        predictor = make_predictor(
            N_FEATURES, task="classification", hidden_size=HIDDEN, seed=4
        )
        self._assert_matches_numeric(
            predictor,
            lambda m: _predictor_objective(m, masks, values, labels),
        )

    def test_decision_log_prob_gradient(self):
        """
        Test the gradient of the decision log-probability.

        :assert: Every selector block agrees with central differences.
        """
        masks, values = _random_inputs(5)
        decisions = (
            np.random.default_rng(6).random((STEPS, BATCH, N_FEATURES)) < 0.5
        ).astype(float)
        selector = make_selector(N_FEATURES, hidden_size=HIDDEN, seed=7)
        self._assert_matches_numeric(
            selector,
            lambda m: _selector_objective(m, masks, values, decisions),
        )


class TestPersistence(unittest.TestCase):
    """
    Unit tests for `save_model` and `load_model`.
    """

    def test_round_trip(self):
        """
        Test saving and reloading both model kinds.

        :assert: Kind, task, dimensions and parameters are restored.
        """
        predictor = make_predictor(
            2, task="classification", n_classes=3, hidden_size=3, seed=1
        )
        selector = make_selector(2, hidden_size=3, head_layers=(2,), seed=2)
        with tempfile.TemporaryDirectory() as directory:
            for model in (predictor, selector):
                path = os.path.join(directory, f"{model.kind}.json")
                save_model(path, model)
                loaded = load_model(path)
                self.assertIs(type(loaded), type(model))
                self.assertEqual(loaded.dims, model.dims)
                for name, value in model.params.items():
                    np.testing.assert_array_equal(loaded.params[name], value)
        self.assertEqual(loaded.kind, "selector")


if __name__ == "__main__":
    unittest.main()
