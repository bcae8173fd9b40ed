"""Network forward/backward/Adam against hand calculations and finite differences."""

import numpy as np
import pytest

from spectral_causal.checkpoint import load_network, save_network
from spectral_causal.nets import (
    AdamState,
    NetworkSpec,
    adam_step,
    backward,
    forward,
    grad_check,
    init_params,
    mlp_spec,
)
from spectral_causal.representations import grad_check_loss


def _identity_linear(dim):
    spec = mlp_spec([dim, dim], final_activation="linear")
    params = init_params(spec, np.random.default_rng(0))
    params.weights[0][:] = np.eye(dim)
    params.biases[0][:] = 0.0
    return spec, params


class TestForward:
    def test_identity_network(self):
        spec, params = _identity_linear(2)
        out, _ = forward(spec, params, np.array([[1.0, 2.0]]), mode="eval")
        np.testing.assert_allclose(out, [[1.0, 2.0]])

    def test_relu_definition(self):
        spec = mlp_spec([2, 2], final_activation="relu")
        params = init_params(spec, np.random.default_rng(0))
        params.weights[0][:] = np.eye(2)
        params.biases[0][:] = 0.0
        out, _ = forward(spec, params, np.array([[-1.0, 3.0]]), mode="eval")
        np.testing.assert_allclose(out, [[0.0, 3.0]])

    def test_tanh_at_zero(self):
        spec = mlp_spec([1, 1], final_activation="tanh")
        params = init_params(spec, np.random.default_rng(0))
        params.weights[0][:] = 0.0
        out, _ = forward(spec, params, np.array([[5.0]]), mode="eval")
        np.testing.assert_allclose(out, [[0.0]])

    def test_dimension_mismatch(self):
        spec, params = _identity_linear(2)
        with pytest.raises(ValueError, match="expects 2"):
            forward(spec, params, np.ones((1, 3)))

    def test_eval_is_pure_and_deterministic(self):
        spec = mlp_spec([3, 5, 2], final_activation="tanh", batch_norm=True)
        params = init_params(spec, np.random.default_rng(5))
        batch = np.random.default_rng(6).standard_normal((4, 3))
        before = params.bn_running_mean[0].copy()
        out1, _ = forward(spec, params, batch, mode="eval")
        out2, _ = forward(spec, params, batch, mode="eval")
        np.testing.assert_array_equal(out1, out2)
        np.testing.assert_array_equal(params.bn_running_mean[0], before)

    def test_train_updates_running_stats(self):
        spec = mlp_spec([3, 5, 2], final_activation="tanh", batch_norm=True)
        params = init_params(spec, np.random.default_rng(5))
        batch = np.random.default_rng(6).standard_normal((16, 3))
        before = params.bn_running_mean[0].copy()
        forward(spec, params, batch, mode="train")
        assert not np.array_equal(params.bn_running_mean[0], before)

    def test_bn_train_eval_consistency_after_convergence(self):
        # Repeated training on one fixed batch drives the running stats to the
        # batch stats, so eval output approaches train output.
        spec = mlp_spec([3, 6, 2], final_activation="linear", batch_norm=True)
        params = init_params(spec, np.random.default_rng(8))
        batch = np.random.default_rng(9).standard_normal((32, 3))
        for _ in range(300):
            train_out, _ = forward(spec, params, batch, mode="train")
        eval_out, _ = forward(spec, params, batch, mode="eval")
        assert np.abs(train_out - eval_out).max() < 1e-3


class TestBackward:
    def test_linear_layer_outer_product(self):
        spec, params = _identity_linear(2)
        x = np.array([[3.0, 4.0]])
        _, cache = forward(spec, params, x, mode="train")
        upstream = np.array([[1.0, 0.0]])
        grads, _ = backward(spec, params, cache, upstream)
        np.testing.assert_allclose(grads.weights[0], np.outer(x[0], upstream[0]))

    def test_zero_upstream_zero_grads(self):
        spec = mlp_spec([3, 4, 2], final_activation="tanh")
        params = init_params(spec, np.random.default_rng(1))
        batch = np.random.default_rng(2).standard_normal((5, 3))
        _, cache = forward(spec, params, batch, mode="train")
        grads, dx = backward(spec, params, cache, np.zeros((5, 2)))
        for _, g in grads.trainable():
            np.testing.assert_array_equal(g, 0.0)
        np.testing.assert_array_equal(dx, 0.0)

    def test_two_layer_finite_difference(self):
        rng = np.random.default_rng(14)
        spec = mlp_spec([3, 6, 4], final_activation="tanh")
        params = init_params(spec, rng)
        batch = rng.standard_normal((6, 3))
        target = rng.standard_normal((6, 4))

        def quad_loss(out):
            return 0.5 * float(np.sum((out - target) ** 2)), out - target

        assert grad_check(spec, params, batch, quad_loss) < 1e-4

    def test_eval_cache_rejected(self):
        spec, params = _identity_linear(2)
        _, cache = forward(spec, params, np.ones((1, 2)), mode="eval")
        with pytest.raises(ValueError, match="train-mode"):
            backward(spec, params, cache, np.ones((1, 2)))

    def test_mismatched_upstream_rejected(self):
        spec, params = _identity_linear(2)
        _, cache = forward(spec, params, np.ones((3, 2)), mode="train")
        with pytest.raises(ValueError, match="upstream"):
            backward(spec, params, cache, np.ones((2, 2)))

    def test_input_grads_finite_difference(self):
        rng = np.random.default_rng(15)
        spec = mlp_spec([3, 5, 2], final_activation="relu", batch_norm=True)
        params = init_params(spec, rng)
        batch = rng.standard_normal((6, 3))
        upstream = rng.standard_normal((6, 2))
        _, cache = forward(spec, params, batch, mode="train")
        _, dx = backward(spec, params, cache, upstream)
        h = 1e-6
        for idx in [(0, 0), (2, 1), (5, 2)]:
            bp = batch.copy(); bp[idx] += h
            bm = batch.copy(); bm[idx] -= h
            fp = float(np.sum(upstream * forward(spec, params, bp, mode="train")[0]))
            fm = float(np.sum(upstream * forward(spec, params, bm, mode="train")[0]))
            numeric = (fp - fm) / (2 * h)
            assert abs(dx[idx] - numeric) < 1e-4 * max(1.0, abs(numeric))


class TestAdam:
    def test_zero_gradients_leave_params(self):
        spec = mlp_spec([2, 3], final_activation="linear")
        params = init_params(spec, np.random.default_rng(3))
        w_before = params.weights[0].copy()
        _, cache = forward(spec, params, np.ones((2, 2)), mode="train")
        grads, _ = backward(spec, params, cache, np.zeros((2, 3)))
        adam_step(AdamState(lr=0.1), params, grads)
        np.testing.assert_array_equal(params.weights[0], w_before)

    def test_first_step_size_bias_corrected(self):
        # Single scalar weight, gradient 1: bias correction makes the very
        # first step equal to lr / (1 + eps) ~= lr.
        spec = NetworkSpec((1, 1), ("linear",), (False,))
        params = init_params(spec, np.random.default_rng(0))
        params.weights[0][:] = 0.5
        params.biases[0][:] = 0.0
        _, cache = forward(spec, params, np.array([[1.0]]), mode="train")
        grads, _ = backward(spec, params, cache, np.array([[1.0]]))
        np.testing.assert_allclose(grads.weights[0], [[1.0]])
        grads.biases[0][:] = 0.0
        adam_step(AdamState(lr=0.1), params, grads)
        np.testing.assert_allclose(params.weights[0], [[0.5 - 0.1]], atol=1e-8)

    def test_bitwise_determinism(self):
        def run():
            rng = np.random.default_rng(77)
            spec = mlp_spec([3, 8, 2], final_activation="tanh", batch_norm=True)
            params = init_params(spec, rng)
            state = AdamState()
            for _ in range(20):
                batch = rng.standard_normal((8, 3))
                out, cache = forward(spec, params, batch, mode="train")
                grads, _ = backward(spec, params, cache, out)
                adam_step(state, params, grads)
            return params

        p1, p2 = run(), run()
        for (l1, a1), (l2, a2) in zip(p1.trainable(), p2.trainable()):
            assert l1 == l2
            np.testing.assert_array_equal(a1, a2)

    def test_nonfinite_gradient_names_layer(self):
        spec = mlp_spec([2, 2], final_activation="linear")
        params = init_params(spec, np.random.default_rng(3))
        _, cache = forward(spec, params, np.ones((2, 2)), mode="train")
        grads, _ = backward(spec, params, cache, np.ones((2, 2)))
        grads.weights[0][0, 0] = np.nan
        with pytest.raises(FloatingPointError, match="layer0.weight"):
            adam_step(AdamState(), params, grads)


class TestGradCheck:
    def test_linear_quadratic_exact(self):
        rng = np.random.default_rng(21)
        spec = mlp_spec([3, 2], final_activation="linear")
        params = init_params(spec, rng)
        batch = rng.standard_normal((5, 3))
        target = rng.standard_normal((5, 2))

        def quad_loss(out):
            return 0.5 * float(np.sum((out - target) ** 2)), out - target

        assert grad_check(spec, params, batch, quad_loss) < 1e-7

    @pytest.mark.parametrize("loss", ["l2", "mle"])
    def test_contrastive_losses(self, loss):
        rng = np.random.default_rng(22)
        spec = mlp_spec([4, 10, 6], final_activation="tanh", batch_norm=True)
        params = init_params(spec, rng)
        batch = rng.standard_normal((10, 4))
        assert grad_check(spec, params, batch, grad_check_loss(loss)) < 1e-4


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(30)
        spec = mlp_spec([3, 7, 2], final_activation="tanh", batch_norm=True)
        params = init_params(spec, rng)
        forward(spec, params, rng.standard_normal((9, 3)), mode="train")
        path = tmp_path / "net.ckpt"
        save_network(path, spec, params)
        spec2, params2 = load_network(path)
        assert spec2 == spec
        for (l1, a1), (l2, a2) in zip(params.trainable(), params2.trainable()):
            assert l1 == l2
            np.testing.assert_array_equal(a1, a2)
        np.testing.assert_array_equal(params.bn_running_var[0], params2.bn_running_var[0])

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOTMAGIC" + bytes(20))
        with pytest.raises(ValueError, match="magic"):
            load_network(path)
