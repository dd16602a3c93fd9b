"""Unit tests for backpropagation through time and the gradient checker."""

import math

import numpy as np
import pytest

from ghostrnn.backprop import (
    bptt,
    cross_entropy_loss,
    final_state_cross_entropy,
    final_state_mse,
    forward_with_tape,
    full_states,
    grad_check,
    mse_loss,
    quadratic_loss,
)
from ghostrnn.cells import CellKind, GhostParams, GruParams, init_cell, run_sequence
from ghostrnn.errors import ConfigError, NonFiniteError, ShapeError
from ghostrnn.kernel import Xoshiro256StarStar


def _zero_gru(feature_dim, state_dim):
    tensors = {name: np.zeros_like(v) for name, v in GruParams.init(feature_dim, state_dim, 0).tensors().items()}
    return GruParams.from_tensors(tensors)


class TestLosses:
    def test_mse_equal_inputs(self):
        value, grad = mse_loss(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
        assert value == 0.0
        assert np.array_equal(grad, np.zeros(2))

    def test_mse_single(self):
        value, grad = mse_loss(np.array([1.0]), np.array([0.0]))
        assert value == 1.0
        assert np.array_equal(grad, np.array([2.0]))

    def test_mse_length_mismatch(self):
        with pytest.raises(ShapeError):
            mse_loss(np.zeros(2), np.zeros(3))

    def test_cross_entropy_uniform_logits(self):
        value, grad = cross_entropy_loss(np.zeros(4), 2)
        assert value == pytest.approx(math.log(4), rel=1e-15)
        assert np.allclose(grad, [0.25, 0.25, -0.75, 0.25], atol=1e-16)

    def test_cross_entropy_large_logit(self):
        value, grad = cross_entropy_loss(np.array([1e6, 0.0]), 0)
        assert math.isfinite(value)
        assert value == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(grad))

    def test_cross_entropy_matches_direct_formula(self):
        logits = np.array([0.3, -1.1, 2.0, 0.7])
        value, grad = cross_entropy_loss(logits, 1)
        softmax = np.exp(logits) / np.sum(np.exp(logits))
        assert value == pytest.approx(-math.log(softmax[1]), rel=1e-12)
        expected = softmax.copy()
        expected[1] -= 1.0
        assert np.allclose(grad, expected, rtol=1e-12, atol=1e-15)

    def test_cross_entropy_class_out_of_range(self):
        with pytest.raises(ConfigError):
            cross_entropy_loss(np.zeros(3), 3)


class TestForwardWithTape:
    def test_states_match_run_sequence(self):
        cell = init_cell(CellKind.GHOST, 3, 6, 2, seed=4)
        xs = Xoshiro256StarStar(5).uniform_array(-1.0, 1.0, (7, 3))
        states, tape = forward_with_tape(cell, xs)
        reference, _ = run_sequence(cell, xs)
        assert len(tape) == 7
        for ours, theirs in zip(states, reference):
            assert np.array_equal(ours.h, theirs.h)
            assert np.array_equal(ours.g, theirs.g)

    def test_cached_gate_matches_recomputation(self):
        cell = init_cell(CellKind.GRU, 2, 3, 1, seed=2)
        xs = Xoshiro256StarStar(3).uniform_array(-1.0, 1.0, (4, 2))
        _, tape = forward_with_tape(cell, xs)
        step = tape.steps[2]
        pre = cell.W_ir @ step.x + cell.b_ir + cell.W_hr @ step.h_prev + cell.b_hr
        assert np.allclose(step.r, 1.0 / (1.0 + np.exp(-pre)), rtol=1e-12)


class TestBptt:
    def test_zero_upstream_gives_zero_gradients(self):
        cell = init_cell(CellKind.GHOST, 2, 4, 2, seed=1)
        xs = np.ones((3, 2))
        _, tape = forward_with_tape(cell, xs)
        grads = bptt(cell, tape, np.zeros((3, 4)))
        for value in grads.tensors.values():
            assert np.all(value == 0.0)

    def test_single_step_zero_params(self):
        cell = _zero_gru(2, 3)
        x = np.array([0.5, -2.0])
        _, tape = forward_with_tape(cell, x[None, :])
        e0 = np.array([[1.0, 0.0, 0.0]])
        grads = bptt(cell, tape, e0)
        assert np.array_equal(grads["b_ic"], np.array([0.5, 0.0, 0.0]))
        assert np.array_equal(grads["W_ic"], np.outer([0.5, 0.0, 0.0], x))
        assert np.all(grads["b_iz"] == 0.0)
        assert np.all(grads["b_ir"] == 0.0)

    def test_length_mismatch(self):
        cell = init_cell(CellKind.GRU, 2, 3, 1, seed=0)
        _, tape = forward_with_tape(cell, np.ones((4, 2)))
        with pytest.raises(ShapeError):
            bptt(cell, tape, np.zeros((3, 3)))

    def test_batch_gradient_is_sum_of_singles(self):
        cell = init_cell(CellKind.GHOST, 2, 4, 2, seed=6)
        rng = Xoshiro256StarStar(7)
        xs = rng.uniform_array(-1.0, 1.0, (5, 3, 2))
        d = rng.uniform_array(-1.0, 1.0, (5, 3, 4))
        _, tape = forward_with_tape(cell, xs)
        batched = bptt(cell, tape, d)
        for name in batched.tensors:
            total = np.zeros_like(batched[name])
            for b in range(3):
                _, single_tape = forward_with_tape(cell, xs[:, b, :])
                total += bptt(cell, single_tape, d[:, b, :])[name]
            assert np.allclose(batched[name], total, rtol=1e-12, atol=1e-14)


class TestGradCheck:
    def test_gru_mse(self):
        rng = Xoshiro256StarStar(11)
        cell = GruParams.init(2, 3, seed=11)
        xs = rng.uniform_array(-1.0, 1.0, (4, 2))
        loss = final_state_mse(rng.uniform_array(-1.0, 1.0, 3))
        assert grad_check(cell, xs, loss, eps=1e-5) < 1e-6

    def test_ghost_cross_entropy(self):
        rng = Xoshiro256StarStar(12)
        cell = GhostParams.init(3, 6, 2, seed=12)
        xs = rng.uniform_array(-1.0, 1.0, (5, 3))
        loss = final_state_cross_entropy(rng.randbelow(6))
        assert grad_check(cell, xs, loss, eps=1e-5) < 1e-6

    def test_ghost_quadratic_all_steps(self):
        rng = Xoshiro256StarStar(13)
        cell = GhostParams.init(3, 6, 2, seed=13)
        xs = rng.uniform_array(-1.0, 1.0, (5, 3))
        loss = quadratic_loss(rng.uniform_array(0.5, 1.5, (5, 6)), rng.uniform_array(-1.0, 1.0, (5, 6)))
        assert grad_check(cell, xs, loss, eps=1e-5) < 1e-6

    def test_gru_mse_short_sequence(self):
        cell = init_cell(CellKind.GRU, 2, 3, 1, seed=0)
        rng = Xoshiro256StarStar(0).spawn(1)
        xs = rng.uniform_array(-1.0, 1.0, (2, 2))
        loss = final_state_mse(rng.uniform_array(-1.0, 1.0, 3))
        assert grad_check(cell, xs, loss, eps=1e-5) < 1e-6

    def test_rounding_noise_on_tiny_gradients_forgiven(self):
        cell = GhostParams.init(3, 6, 2, seed=13)
        xs = Xoshiro256StarStar(13).uniform_array(-1.0, 1.0, (5, 3))

        def offset_loss(states):
            return 1000.0 + 1e-12 * float(np.sum(states)), np.full_like(states, 1e-12)

        assert grad_check(cell, xs, offset_loss, eps=1e-5) < 1e-6

    @pytest.mark.parametrize("eps", [1e-8, 1e-2])
    def test_eps_range_enforced(self, eps):
        cell = GruParams.init(2, 3, seed=0)
        with pytest.raises(ConfigError):
            grad_check(cell, np.ones((2, 2)), final_state_mse(np.zeros(3)), eps=eps)

    def test_absurd_eps_gives_large_error(self):
        cell = GhostParams.init(3, 6, 2, seed=12)
        xs = Xoshiro256StarStar(1).uniform_array(-1.0, 1.0, (5, 3))
        error = grad_check(cell, xs, final_state_mse(np.ones(6)), eps=1e-1, enforce_eps_range=False)
        assert error > 1e-5

    def test_non_finite_loss(self):
        cell = GruParams.init(2, 3, seed=0)

        def bad_loss(states):
            return math.nan, np.zeros_like(states)

        with pytest.raises(NonFiniteError):
            grad_check(cell, np.ones((2, 2)), bad_loss)

    def test_full_states_shape(self):
        cell = init_cell(CellKind.GHOST, 2, 4, 2, seed=0)
        states, _ = forward_with_tape(cell, np.ones((3, 2)))
        assert full_states(states).shape == (3, 4)
