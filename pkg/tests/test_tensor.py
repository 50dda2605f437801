import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rlsrgan import tensor as T
from rlsrgan.layers import batch_norm, conv2d, pixel_shuffle, pixel_unshuffle
from rlsrgan.optim import Adam, AdamState, adam_step
from rlsrgan.tensor import Tensor

from conftest import gradcheck

TOL = 1e-4


def param(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


class TestConv2d:
    def test_scalar_product(self):
        out = conv2d(Tensor([[[[2.0]]]]), Tensor([[[[3.0]]]]), Tensor([0.0]))
        assert out.shape == (1, 1, 1, 1)
        assert out.data.item() == 6.0

    def test_identity_kernel(self, rng):
        x = rng.random((1, 1, 3, 3)).astype(np.float32)
        w = np.zeros((1, 1, 3, 3), dtype=np.float32)
        w[0, 0, 1, 1] = 1.0
        out = conv2d(Tensor(x), Tensor(w), pad=1)
        np.testing.assert_array_equal(out.data, x)

    def test_matches_direct_loop(self, rng):
        x = rng.standard_normal((2, 3, 7, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        with T.float64_mode():
            out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=2, pad=1).data
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        ho, wo = (7 + 2 - 3) // 2 + 1, (6 + 2 - 3) // 2 + 1
        ref = np.zeros((2, 4, ho, wo))
        for n in range(2):
            for o in range(4):
                for i in range(ho):
                    for j in range(wo):
                        ref[n, o, i, j] = np.sum(xp[n, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3] * w[o]) + b[o]
        np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)

    def test_output_size(self):
        x = Tensor(np.zeros((1, 2, 9, 8)))
        w = Tensor(np.zeros((5, 2, 3, 3)))
        assert conv2d(x, w, stride=2, pad=0).shape == (1, 5, 4, 3)

    def test_channel_mismatch_names_dimension(self):
        with pytest.raises(ValueError, match="Cin"):
            conv2d(Tensor(np.zeros((1, 2, 5, 5))), Tensor(np.zeros((1, 3, 3, 3))))

    @pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (1, 0)])
    def test_gradcheck(self, f64, rng, stride, pad):
        x = param(rng, 1, 2, 5, 5)
        w = param(rng, 3, 2, 3, 3)
        b = param(rng, 3)
        err = gradcheck(lambda: conv2d(x, w, b, stride, pad).sum(), [x, w, b])
        assert err < TOL

    def test_gradcheck_9x9(self, f64, rng):
        x = param(rng, 2, 2, 10, 10)
        w = param(rng, 2, 2, 9, 9, scale=0.1)
        proj = rng.standard_normal((2, 2, 10, 10))
        err = gradcheck(lambda: (conv2d(x, w, pad=4) * proj).sum(), [x, w], samples=40)
        assert err < TOL


class TestActivations:
    def test_prelu_values(self):
        a = Tensor([0.25])
        assert T.prelu(Tensor([2.0]), a).data[0] == 2.0
        assert T.prelu(Tensor([-2.0]), a).data[0] == -0.5
        assert T.prelu(Tensor([0.0]), Tensor([7.0])).data[0] == 0.0

    def test_prelu_gradcheck(self, f64, rng):
        x = param(rng, 2, 3, 4, 4)
        a = Tensor(np.array([0.25, 0.1, 0.5]), requires_grad=True)
        proj = rng.standard_normal(x.shape)
        assert gradcheck(lambda: (T.prelu(x, a) * proj).sum(), [x, a]) < TOL

    def test_prelu_slope_count_checked(self):
        with pytest.raises(ValueError):
            T.prelu(Tensor(np.zeros((1, 3, 2, 2))), Tensor(np.ones(2)))

    def test_leaky_relu(self):
        assert T.leaky_relu(Tensor([-1.0]), 0.2).data[0] == pytest.approx(-0.2)
        assert T.leaky_relu(Tensor([3.5]), 0.2).data[0] == 3.5

    def test_leaky_relu_gradient(self, f64):
        x = Tensor([-1.0], requires_grad=True)
        T.leaky_relu(x, 0.2).sum().backward()
        assert x.grad[0] == pytest.approx(0.2)
        assert gradcheck(lambda: T.leaky_relu(x, 0.2).sum(), [x]) < TOL

    def test_sigmoid_zero(self):
        assert T.sigmoid(Tensor([0.0])).data[0] == 0.5

    def test_sigmoid_extreme_is_finite(self):
        out = T.sigmoid(Tensor([-1000.0, 1000.0], dtype=np.float64)).data
        assert np.all(np.isfinite(out))


class TestBatchNorm:
    def _stats(self, c=3):
        return np.zeros(c), np.ones(c)

    def test_already_normalised(self, f64, rng):
        x = rng.standard_normal((4, 2, 8, 8))
        x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
        rm, rv = self._stats(2)
        out = batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True)
        np.testing.assert_allclose(out.data, x, atol=1e-4)

    def test_zero_gamma_gives_beta(self, rng):
        rm, rv = self._stats(3)
        beta = np.array([0.5, -1.0, 2.0])
        out = batch_norm(Tensor(rng.random((2, 3, 4, 4))), Tensor(np.zeros(3)), Tensor(beta), rm, rv, True)
        np.testing.assert_allclose(out.data, np.broadcast_to(beta.reshape(1, 3, 1, 1), out.shape), atol=1e-7)

    def test_train_output_statistics(self, f64, rng):
        x = rng.standard_normal((3, 4, 5, 5)) * 3.0 + 2.0
        rm, rv = self._stats(4)
        out = batch_norm(Tensor(x), Tensor(np.ones(4)), Tensor(np.zeros(4)), rm, rv, True).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0.0, atol=1e-6)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1.0, atol=1e-4)

    def test_running_stats_update_and_eval(self, f64, rng):
        x = rng.standard_normal((2, 1, 4, 4)) + 5.0
        rm, rv = np.zeros(1), np.ones(1)
        batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, True, momentum=0.1)
        assert rm[0] == pytest.approx(0.1 * x.mean())
        out = batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), rm, rv, False)
        np.testing.assert_allclose(out.data, (x - rm[0]) / np.sqrt(rv[0] + 1e-5))

    def test_single_element_train_errors(self):
        rm, rv = self._stats(2)
        with pytest.raises(ValueError, match="variance"):
            batch_norm(Tensor(np.zeros((1, 2, 1, 1))), Tensor(np.ones(2)), Tensor(np.zeros(2)), rm, rv, True)

    @pytest.mark.parametrize("training", [True, False])
    def test_gradcheck(self, f64, rng, training):
        x = param(rng, 2, 3, 4, 4)
        g = Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)
        b = param(rng, 3)
        proj = rng.standard_normal((2, 3, 4, 4))
        rm, rv = rng.standard_normal(3), rng.uniform(0.5, 2.0, 3)

        def loss():
            return (batch_norm(x, g, b, rm.copy(), rv.copy(), training) * proj).sum()

        assert gradcheck(loss, [x, g, b]) < TOL


class TestPixelShuffle:
    def test_shape(self):
        assert pixel_shuffle(Tensor(np.zeros((1, 4, 2, 2))), 2).shape == (1, 1, 4, 4)

    def test_layout(self):
        x = np.arange(4, dtype=np.float32).reshape(1, 4, 1, 1)
        np.testing.assert_array_equal(pixel_shuffle(Tensor(x), 2).data[0, 0], [[0, 1], [2, 3]])

    def test_non_divisible_errors(self):
        with pytest.raises(ValueError):
            pixel_shuffle(Tensor(np.zeros((1, 6, 2, 2))), 2)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
    def test_bijection_and_multiset(self, c, r, h, w, seed):
        x = np.random.default_rng(seed).standard_normal((2, c * r * r, h, w)).astype(np.float32)
        y = pixel_shuffle(Tensor(x), r)
        assert y.shape == (2, c, h * r, w * r)
        np.testing.assert_array_equal(pixel_unshuffle(y, r).data, x)
        np.testing.assert_array_equal(np.sort(y.data, axis=None), np.sort(x, axis=None))
        assert y.data.sum(dtype=np.float64) == pytest.approx(x.sum(dtype=np.float64))

    def test_gradcheck(self, f64, rng):
        x = param(rng, 1, 8, 3, 3)
        proj = rng.standard_normal((1, 2, 6, 6))
        assert gradcheck(lambda: (pixel_shuffle(x, 2) * proj).sum(), [x]) < TOL


class TestCoreMath:
    def test_gaussian_log_density_at_mean(self):
        val = T.gaussian_log_density(1.3, 1.3, 0.0).item()
        assert val == pytest.approx(-0.9189385, abs=1e-7)
        assert val == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-6)

    def test_square_derivative(self):
        x = Tensor([3.0], requires_grad=True)
        T.square(x).sum().backward()
        assert x.grad[0] == 6.0

    def test_log_of_nonpositive_checked(self):
        with pytest.raises(ValueError, match="non-positive"):
            T.log(Tensor([1.0, 0.0]))

    def test_unchecked_log(self):
        T.set_checked(False)
        try:
            with np.errstate(divide="ignore"):
                assert T.log(Tensor([0.0])).data[0] == -np.inf
        finally:
            T.set_checked(True)

    @pytest.mark.parametrize("name", ["add", "sub", "mul", "div", "matmul", "sigmoid", "exp", "log",
                                      "mean", "sum", "square", "gauss", "clip", "relu", "linear", "getitem"])
    def test_gradcheck(self, f64, rng, name):
        a = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        b = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
        row = Tensor(rng.uniform(0.5, 2.0, (1, 4)), requires_grad=True)
        m = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        w = Tensor(rng.standard_normal((5, 4)), requires_grad=True)
        proj = rng.standard_normal((3, 4))
        cases = {
            "add": (lambda: ((a + row) * proj).sum(), [a, row]),
            "sub": (lambda: ((a - b) * proj).sum(), [a, b]),
            "mul": (lambda: ((a * row) * proj).sum(), [a, row]),
            "div": (lambda: ((a / b) * proj).sum(), [a, b]),
            "matmul": (lambda: T.square(a @ m).sum(), [a, m]),
            "sigmoid": (lambda: (T.sigmoid(a - 1.0) * proj).sum(), [a]),
            "exp": (lambda: (T.exp(a) * proj).sum(), [a]),
            "log": (lambda: (T.log(a) * proj).sum(), [a]),
            "mean": (lambda: T.square(a.mean(axis=0)).sum(), [a]),
            "sum": (lambda: T.square(a.sum(axis=1, keepdims=True)).mean(), [a]),
            "square": (lambda: (T.square(a) * proj).sum(), [a]),
            "gauss": (lambda: T.gaussian_log_density(b, a, row * 0.3).sum(), [a, b, row]),
            "clip": (lambda: (T.clip(a, 0.9, 1.6) * proj).sum(), [a]),
            "relu": (lambda: (T.relu(a - 1.2) * proj).sum(), [a]),
            "linear": (lambda: T.square(T.linear(a, w, Tensor(np.ones(5)))).sum(), [a, w]),
            "getitem": (lambda: T.square(a[:, 1]).sum() + a[0, 2], [a]),
        }
        fn, params = cases[name]
        assert gradcheck(fn, params) < TOL


class TestBackward:
    def test_grad_of_weighted_sum(self):
        x = np.array([1.0, -2.0, 0.5], dtype=np.float32)
        w = Tensor(np.zeros(3), requires_grad=True)
        (w * x).sum().backward()
        np.testing.assert_array_equal(w.grad, x)

    def test_accumulation_doubles(self, rng):
        w = Tensor(rng.standard_normal(4), requires_grad=True)
        x = rng.standard_normal(4)
        loss = T.square(w * x).sum()
        loss.backward()
        first = w.grad.copy()
        loss.backward()
        np.testing.assert_array_equal(w.grad, 2 * first)

    def test_non_scalar_rejected(self):
        w = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError, match="scalar"):
            (w * 2.0).backward()

    def test_every_requires_grad_node_populated(self, rng):
        w = Tensor(rng.standard_normal(3), requires_grad=True)
        mid = T.exp(w)
        out = T.square(mid).sum()
        out.backward()
        assert w.grad is not None and mid.grad is not None and out.grad is not None

    def test_shared_subexpression(self):
        x = Tensor([2.0], requires_grad=True, dtype=np.float64)
        y = x * x
        (y + y * 3.0).sum().backward()
        assert x.grad[0] == pytest.approx(16.0)

    def test_no_grad_records_nothing(self):
        w = Tensor([1.0], requires_grad=True)
        with T.no_grad():
            y = w * 2.0
        assert not y.requires_grad

    def test_deep_chain_no_recursion_limit(self):
        x = Tensor([1.0], requires_grad=True)
        y = x
        for _ in range(5000):
            y = y * 1.0
        y.sum().backward()
        assert x.grad[0] == 1.0

    def test_deterministic(self, rng):
        def run():
            r = np.random.default_rng(7)
            x = Tensor(r.standard_normal((2, 3, 6, 6)))
            w = Tensor(r.standard_normal((4, 3, 3, 3)), requires_grad=True)
            loss = T.square(conv2d(x, w, pad=1)).mean()
            loss.backward()
            return loss.data.tobytes(), w.grad.tobytes()

        assert run() == run()


class TestAdam:
    def test_first_step_value(self):
        p = Tensor([0.0], requires_grad=True, dtype=np.float64)
        p.grad = np.array([1.0])
        adam_step([p], AdamState(lr=1e-3))
        assert p.data[0] == pytest.approx(-9.99999e-4, rel=1e-6)

    def test_zero_grad_no_move(self):
        p = Tensor([0.3], requires_grad=True)
        p.zero_grad()
        before = p.data.copy()
        adam_step([p], AdamState())
        np.testing.assert_array_equal(p.data, before)

    def test_symmetry(self, rng):
        g = rng.standard_normal(5)
        a = Tensor(np.ones(5), requires_grad=True)
        b = Tensor(np.ones(5), requires_grad=True)
        state = AdamState()
        for _ in range(3):
            a.grad, b.grad = g.copy(), g.copy()
            adam_step([a, b], state)
        np.testing.assert_array_equal(a.data, b.data)

    def test_step_count_increments(self):
        p = Tensor([1.0], requires_grad=True)
        state = AdamState()
        for i in range(3):
            p.grad = np.ones(1, dtype=np.float32)
            adam_step([p], state)
            assert state.step_count == i + 1
        assert state.first_moment[0].shape == p.shape

    def test_missing_grad_names_parameter(self):
        p = Tensor([1.0], requires_grad=True, name="encoder.head.weight")
        with pytest.raises(ValueError, match="encoder.head.weight"):
            adam_step([p], AdamState())

    def test_zero_lr_bitwise_unchanged(self, rng):
        p = Tensor(rng.standard_normal(10), requires_grad=True)
        before = p.data.tobytes()
        opt = Adam([p], lr=0.0)
        for _ in range(4):
            p.grad = rng.standard_normal(10).astype(np.float32)
            opt.step()
        assert p.data.tobytes() == before

    def test_minimises_quadratic(self):
        p = Tensor([5.0], requires_grad=True)
        opt = Adam([p], lr=0.1)
        for _ in range(300):
            opt.zero_grad()
            T.square(p - 2.0).sum().backward()
            opt.step()
        assert p.data[0] == pytest.approx(2.0, abs=1e-2)
