"""Unit tests for the numeric core: layer ops, losses, optimizer, RNG, and
the finite-difference checker that the rest of the suite leans on."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from tripletrec.nn import (
    ParamTensor,
    RngState,
    adam_step,
    bce_loss,
    bce_loss_from_logit,
    dropout_backward,
    dropout_forward,
    glorot_uniform,
    grad_check,
    layer_norm_forward,
    linear_forward,
    linear_backward,
    relu_backward,
    relu_forward,
    sigmoid_stable,
    zero_grads,
)


def pt(values) -> ParamTensor:
    return ParamTensor(np.array(values, dtype=np.float64))


class TestLinear:
    def test_identity_weights(self):
        out, _ = linear_forward(np.array([[1.0, 2.0]]), pt([[1, 0], [0, 1]]), pt([[0, 0]]))
        npt.assert_array_equal(out, [[1.0, 2.0]])

    def test_zero_input_passes_bias(self):
        out, _ = linear_forward(np.array([[0.0, 0.0]]), pt([[5, 7], [2, 9]]), pt([[3, -1]]))
        npt.assert_array_equal(out, [[3.0, -1.0]])

    def test_hand_matmul(self):
        out, _ = linear_forward(np.array([[1.0, 1.0]]), pt([[2, 0], [0, 3]]), pt([[1, 1]]))
        npt.assert_array_equal(out, [[3.0, 4.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(1, 3\).*\(2, 2\)"):
            linear_forward(np.zeros((1, 3)), pt([[1, 0], [0, 1]]), pt([[0, 0]]))

    def test_linearity_with_zero_bias(self):
        gen = np.random.default_rng(0)
        w = pt(gen.normal(size=(4, 3)))
        b = pt(np.zeros((1, 3)))
        x = gen.normal(size=(2, 4))
        y = gen.normal(size=(2, 4))
        lhs, _ = linear_forward(x + y, w, b)
        fx, _ = linear_forward(x, w, b)
        fy, _ = linear_forward(y, w, b)
        npt.assert_allclose(lhs, fx + fy, rtol=1e-12)


class TestRelu:
    def test_elementwise_max(self):
        out, _ = relu_forward(np.array([[-1.0, 0.0, 2.0]]))
        npt.assert_array_equal(out, [[0.0, 0.0, 2.0]])

    def test_all_negative_gives_zero(self):
        out, _ = relu_forward(np.full((3, 4), -2.5))
        npt.assert_array_equal(out, np.zeros((3, 4)))

    def test_gradient_gating(self):
        x = np.array([[3.0, -3.0, 0.0]])
        _, cache = relu_forward(x)
        d = relu_backward(np.ones_like(x), cache)
        npt.assert_array_equal(d, [[1.0, 0.0, 0.0]])  # subgradient at 0 is 0


class TestSigmoid:
    def test_symmetry_point(self):
        assert sigmoid_stable(0.0) == 0.5

    def test_minus_two(self):
        npt.assert_allclose(sigmoid_stable(-2.0), 0.11920292202211755, rtol=1e-14)

    def test_complement_sums_to_one(self):
        x = np.linspace(-50, 50, 1001)
        npt.assert_allclose(sigmoid_stable(x) + sigmoid_stable(-x), 1.0, atol=1e-15)

    def test_no_overflow_at_700(self):
        assert sigmoid_stable(700.0) == 1.0
        assert sigmoid_stable(-700.0) > 0.0


class TestBce:
    def test_half_prob_is_ln2(self):
        npt.assert_allclose(bce_loss(0.5, 0), math.log(2), rtol=1e-12)

    def test_confident_correct_is_near_zero(self):
        assert bce_loss(1.0 - 1e-12, 1) < 1e-11

    def test_sigmoid_minus_two_label_zero(self):
        # -ln(1 - sigmoid(-2)) = ln(1 + exp(-2))
        expected = math.log1p(math.exp(-2.0))
        npt.assert_allclose(bce_loss(sigmoid_stable(-2.0), 0), expected, rtol=1e-10)
        npt.assert_allclose(expected, 0.126928, atol=5e-7)

    def test_logit_form_matches_probability_form(self):
        gen = np.random.default_rng(1)
        o = gen.normal(scale=4, size=200)
        y = gen.integers(0, 2, size=200).astype(float)
        npt.assert_allclose(
            bce_loss_from_logit(o, y), bce_loss(sigmoid_stable(o), y), rtol=1e-10
        )

    def test_loss_monotone_in_logit_for_label_zero(self):
        o = np.linspace(-6, 6, 100)
        losses = bce_loss_from_logit(o, np.zeros_like(o))
        assert np.all(np.diff(losses) > 0)


class TestDropout:
    def test_p_zero_is_identity(self):
        x = np.random.default_rng(0).normal(size=(5, 5))
        out, mask = dropout_forward(x, 0.0, RngState(0), training=True)
        assert mask is None
        npt.assert_array_equal(out, x)

    def test_inference_is_identity(self):
        x = np.random.default_rng(0).normal(size=(5, 5))
        out, mask = dropout_forward(x, 0.2, RngState(0), training=False)
        assert mask is None
        npt.assert_array_equal(out, x)

    def test_inverted_scaling_preserves_mean(self):
        x = np.ones((100, 1000))
        out, _ = dropout_forward(x, 0.2, RngState(7), training=True)
        assert abs(out.mean() - 1.0) < 0.01

    def test_p_one_rejected(self):
        with pytest.raises(ValueError):
            dropout_forward(np.ones((2, 2)), 1.0, RngState(0), training=True)

    def test_same_seed_gives_bitwise_identical_masks(self):
        x = np.ones((50, 50))
        out1, mask1 = dropout_forward(x, 0.3, RngState(42), training=True)
        out2, mask2 = dropout_forward(x, 0.3, RngState(42), training=True)
        assert np.array_equal(mask1, mask2)
        assert np.array_equal(out1, out2)

    def test_backward_reuses_mask(self):
        x = np.ones((4, 4))
        _, mask = dropout_forward(x, 0.5, RngState(3), training=True)
        d = dropout_backward(np.ones_like(x), mask)
        npt.assert_array_equal(d, mask)


class TestLayerNorm:
    def test_standardizes_rows(self):
        x = np.array([[1.0, 2.0, 3.0]])
        gain, shift = pt(np.ones((1, 3))), pt(np.zeros((1, 3)))
        out, _ = layer_norm_forward(x, gain, shift)
        assert abs(out.mean()) < 1e-9
        npt.assert_allclose(out.var(), 1.0, atol=1e-9)

    def test_constant_row_maps_to_shift(self):
        x = np.array([[5.0, 5.0, 5.0]])
        out, _ = layer_norm_forward(x, pt(np.ones((1, 3))), pt(np.zeros((1, 3))))
        npt.assert_array_equal(out, [[0.0, 0.0, 0.0]])

    def test_zero_gain_broadcasts_shift(self):
        x = np.random.default_rng(0).normal(size=(4, 3))
        out, _ = layer_norm_forward(x, pt(np.zeros((1, 3))), pt([[1.0, -2.0, 0.5]]))
        npt.assert_array_equal(out, np.tile([[1.0, -2.0, 0.5]], (4, 1)))

    def test_row_stats_random_inputs(self):
        gen = np.random.default_rng(5)
        x = gen.normal(size=(64, 16)) * 3 + 1
        out, _ = layer_norm_forward(x, pt(np.ones((1, 16))), pt(np.zeros((1, 16))))
        assert np.abs(out.mean(axis=1)).max() < 1e-9
        npt.assert_allclose(out.var(axis=1), 1.0, atol=1e-6)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = pt([[1.0, -2.0]])
        adam_step([p], lr=0.1, step=1)
        npt.assert_array_equal(p.value, [[1.0, -2.0]])

    def test_first_step_moves_by_lr(self):
        p = pt([[0.0]])
        p.grad[...] = 1.0
        adam_step([p], lr=0.1, step=1)
        npt.assert_allclose(p.value, [[-0.1]], rtol=1e-7)

    def test_identical_params_stay_identical(self):
        gen = np.random.default_rng(2)
        vals = gen.normal(size=(3, 3))
        p1, p2 = pt(vals), pt(vals.copy())
        for step in range(1, 20):
            g = gen.normal(size=(3, 3))
            p1.grad[...] = g
            p2.grad[...] = g
            adam_step([p1, p2], lr=0.05, step=step)
            zero_grads([p1, p2])
        assert np.array_equal(p1.value, p2.value)


class TestGradCheck:
    def test_quadratic(self):
        theta = pt([[3.0]])

        def f():
            theta.grad += 2.0 * theta.value
            return float((theta.value ** 2).sum())

        report = grad_check(f, [theta], h=1e-5)
        assert report.passed
        assert report.max_rel_error < 1e-6
        npt.assert_allclose(theta.grad, [[6.0]], rtol=1e-12)

    def test_constant_function(self):
        theta = pt([[1.0, 2.0]])
        report = grad_check(lambda: 5.0, [theta], h=1e-5)
        assert report.max_rel_error == 0.0
        assert report.passed

    def test_wrong_gradient_is_caught(self):
        theta = pt([[1.0]])

        def f():
            theta.grad += 3.0 * theta.value  # wrong: claims d(x^2)=3x
            return float((theta.value ** 2).sum())

        assert not grad_check(f, [theta]).passed

    def test_non_finite_probe_reported(self):
        theta = pt([[0.0]])

        def f():
            v = float(theta.value[0, 0])
            theta.grad += 1.0
            return math.inf if v > 0 else v

        report = grad_check(f, [theta])
        assert report.failures
        assert not report.passed


class TestOpGradients:
    """Central finite differences against each op's backward on random shapes."""

    def _check(self, build_loss, params, h=1e-5, tol=1e-4):
        report = grad_check(build_loss, params, h=h, tol=tol)
        assert report.passed, report.summary()

    def test_linear(self):
        gen = np.random.default_rng(0)
        x = ParamTensor(gen.normal(size=(3, 5)))
        w = ParamTensor(gen.normal(size=(5, 4)))
        b = ParamTensor(gen.normal(size=(1, 4)))
        upstream = gen.normal(size=(3, 4))

        def f():
            out, cache = linear_forward(x.value, w, b)
            x.grad += linear_backward(upstream, cache)
            return float((upstream * out).sum())

        self._check(f, [x, w, b])

    def test_relu(self):
        gen = np.random.default_rng(1)
        x = ParamTensor(gen.normal(size=(3, 6)))
        upstream = gen.normal(size=(3, 6))

        def f():
            out, cache = relu_forward(x.value)
            x.grad += relu_backward(upstream, cache)
            return float((upstream * out).sum())

        self._check(f, [x])

    def test_layer_norm(self):
        gen = np.random.default_rng(2)
        x = ParamTensor(gen.normal(size=(4, 6)))
        gain = ParamTensor(gen.normal(size=(1, 6)))
        shift = ParamTensor(gen.normal(size=(1, 6)))
        upstream = gen.normal(size=(4, 6))

        def f():
            out, cache = layer_norm_forward(x.value, gain, shift)
            from tripletrec.nn import layer_norm_backward

            x.grad += layer_norm_backward(upstream, cache)
            return float((upstream * out).sum())

        self._check(f, [x, gain, shift])

    def test_dropout_frozen_mask(self):
        gen = np.random.default_rng(3)
        x = ParamTensor(gen.normal(size=(4, 6)))
        upstream = gen.normal(size=(4, 6))

        def f():
            out, mask = dropout_forward(x.value, 0.3, RngState(99), training=True)
            x.grad += dropout_backward(upstream, mask)
            return float((upstream * out).sum())

        self._check(f, [x])

    def test_sigmoid_bce_chain(self):
        gen = np.random.default_rng(4)
        o = ParamTensor(gen.normal(size=(1, 8), scale=2))
        y = gen.integers(0, 2, size=(1, 8)).astype(float)

        def f():
            o.grad += (sigmoid_stable(o.value) - y) / o.value.size
            return float(bce_loss_from_logit(o.value, y).mean())

        self._check(f, [o])


class TestRngState:
    def test_same_state_same_stream(self):
        a = RngState(5).next_generator().random(10)
        b = RngState(5).next_generator().random(10)
        assert np.array_equal(a, b)

    def test_counter_advances_stream(self):
        rng = RngState(5)
        a = rng.next_generator().random(10)
        b = rng.next_generator().random(10)
        assert rng.counter == 2
        assert not np.array_equal(a, b)

    def test_counter_resume_matches(self):
        rng = RngState(5)
        rng.next_generator()
        resumed = RngState(5, counter=1)
        assert np.array_equal(
            rng.next_generator().random(4), resumed.next_generator().random(4)
        )


class TestGlorot:
    def test_bounds_and_determinism(self):
        gen = np.random.default_rng(0)
        w = glorot_uniform(30, 20, gen)
        limit = math.sqrt(6.0 / 50)
        assert np.all(np.abs(w) <= limit)
        w2 = glorot_uniform(30, 20, np.random.default_rng(0))
        assert np.array_equal(w, w2)


class TestFiniteness:
    def test_ops_keep_finite_inputs_finite(self):
        gen = np.random.default_rng(8)
        x = gen.normal(size=(6, 5), scale=50)
        w = pt(gen.normal(size=(5, 4), scale=50))
        b = pt(gen.normal(size=(1, 4), scale=50))
        out, _ = linear_forward(x, w, b)
        out, _ = layer_norm_forward(out, pt(np.ones((1, 4))), pt(np.zeros((1, 4))))
        out, _ = relu_forward(out)
        out, _ = dropout_forward(out, 0.2, RngState(0), training=True)
        assert np.all(np.isfinite(out))
        assert np.all(np.isfinite(sigmoid_stable(x * 10)))
        assert np.all(np.isfinite(bce_loss_from_logit(x * 10, 1.0)))
