"""Tensor op contracts: forward values, error paths, and gradient checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctgraph.errors import ShapeError
from ctgraph.gradcheck import check_gradients, max_relative_error, numerical_gradient
from ctgraph.tensor import (
    AdamW,
    Tensor,
    bce_with_logits,
    concat,
    gather_rows,
    layer_norm,
    leaky_relu,
    matmul,
    mlp_forward,
    sigmoid,
    softmax,
    softplus,
)


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        m = Tensor([[3.0, 4.0], [5.0, 6.0]])
        assert np.array_equal(matmul(eye, m).data, m.data)

    def test_row_times_column(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.shape == (1, 1)
        assert out.data[0, 0] == 11.0

    def test_against_triple_loop(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((5, 4))
        b = rng.standard_normal((4, 3))
        expected = np.zeros((5, 3))
        for i in range(5):
            for j in range(3):
                for k in range(4):
                    expected[i, j] += a[i, k] * b[k, j]
        out = matmul(Tensor(a), Tensor(b)).data
        assert np.max(np.abs(out - expected)) < 1e-12

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 2))))

    def test_gradients(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        err = check_gradients(lambda: matmul(a, b).sum(), [a, b])
        assert err < 1e-4


class TestLeakyRelu:
    def test_zero_is_fixed_point(self):
        assert leaky_relu(Tensor([0.0]), 0.2).data[0] == 0.0

    def test_negative_definition(self):
        assert leaky_relu(Tensor([-2.0]), 0.2).data[0] == pytest.approx(-0.4)

    def test_gradient_at_negative_one_equals_slope(self):
        x = Tensor([-1.0], requires_grad=True)
        out = leaky_relu(x, 0.2).sum()
        out.backward()
        numeric = numerical_gradient(lambda: leaky_relu(x, 0.2).sum(), x, h=1e-6)
        assert x.grad[0] == pytest.approx(0.2)
        assert numeric[0] == pytest.approx(0.2, rel=1e-6)

    def test_slope_must_be_in_unit_interval(self):
        with pytest.raises(ValueError):
            leaky_relu(Tensor([1.0]), 1.5)


class TestSoftmax:
    def test_symmetry(self):
        out = softmax(Tensor([2.5, 2.5, 2.5]))
        assert np.allclose(out.data, 1.0 / 3.0, atol=1e-15)

    def test_single_element(self):
        assert softmax(Tensor([42.0])).data[0] == pytest.approx(1.0)

    def test_shift_invariance_with_huge_scores(self):
        big = softmax(Tensor([1000.0, 1001.0])).data
        small = softmax(Tensor([0.0, 1.0])).data
        assert np.all(np.isfinite(big))
        assert np.allclose(big, small, atol=1e-15)

    def test_empty_group_rejected(self):
        with pytest.raises(ShapeError):
            softmax(Tensor(np.zeros(0)))

    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
    @settings(max_examples=60, deadline=None)
    def test_sums_to_one(self, values):
        out = softmax(Tensor(values)).data
        assert out.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(out > 0)

    def test_float32_mode_within_its_tolerance(self):
        from ctgraph.tensor import SOFTMAX_SUM_ATOL

        rng = np.random.default_rng(12)
        out = softmax(Tensor(rng.standard_normal(32).astype(np.float32))).data
        assert out.dtype == np.float32
        assert abs(out.sum() - 1.0) <= SOFTMAX_SUM_ATOL["float32"]

    def test_gradients(self):
        x = Tensor(np.random.default_rng(5).standard_normal(6), requires_grad=True)
        err = check_gradients(lambda: (softmax(x) * Tensor([1, 2, 3, 4, 5, 6.0])).sum(), [x])
        assert err < 1e-4


class TestLayerNorm:
    def _ones_zeros(self, d):
        return Tensor(np.ones(d)), Tensor(np.zeros(d))

    def test_constant_vector_maps_to_zeros(self):
        gamma, beta = self._ones_zeros(5)
        out = layer_norm(Tensor(np.full(5, 3.7)), gamma, beta)
        assert np.allclose(out.data, 0.0, atol=1e-12)

    def test_already_standardized(self):
        gamma, beta = self._ones_zeros(2)
        out = layer_norm(Tensor([1.0, -1.0]), gamma, beta)
        assert np.max(np.abs(out.data - np.array([1.0, -1.0]))) <= 1e-6

    def test_random_statistics(self):
        rng = np.random.default_rng(16)
        x = Tensor(2.0 * rng.standard_normal(16))
        gamma, beta = self._ones_zeros(16)
        out = layer_norm(x, gamma, beta).data
        assert abs(out.mean()) <= 1e-9
        assert 1 - 1e-6 <= out.var() <= 1.0

    def test_gradients(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
        gamma = Tensor(rng.standard_normal(6), requires_grad=True)
        beta = Tensor(rng.standard_normal(6), requires_grad=True)
        weights = Tensor(rng.standard_normal((3, 6)))
        err = check_gradients(
            lambda: (layer_norm(x, gamma, beta) * weights).sum(), [x, gamma, beta]
        )
        assert err < 1e-4


class TestMlpForward:
    def test_zero_weights_emit_bias(self):
        layers = [(Tensor(np.zeros((3, 2))), Tensor([1.5, -2.0]))]
        out = mlp_forward(Tensor([[7.0, 8.0, 9.0]]), layers)
        assert np.allclose(out.data, [[1.5, -2.0]])

    def test_identity_single_layer(self):
        layers = [(Tensor(np.eye(4)), Tensor(np.zeros(4)))]
        x = np.random.default_rng(0).standard_normal((2, 4))
        out = mlp_forward(Tensor(x), layers)
        assert np.array_equal(out.data, x)

    def test_two_layer_matches_composition_oracle(self):
        rng = np.random.default_rng(21)
        w1, b1 = rng.standard_normal((4, 8)), rng.standard_normal(8)
        w2, b2 = rng.standard_normal((8, 3)), rng.standard_normal(3)
        x = rng.standard_normal((5, 4))
        layers = [(Tensor(w1), Tensor(b1)), (Tensor(w2), Tensor(b2))]
        out = mlp_forward(Tensor(x), layers, slope=0.2).data

        hidden = x @ w1 + b1
        hidden = np.where(hidden > 0, hidden, 0.2 * hidden)
        expected = hidden @ w2 + b2
        assert np.array_equal(out, expected)

    def test_dimension_chain_break(self):
        layers = [
            (Tensor(np.zeros((4, 8))), Tensor(np.zeros(8))),
            (Tensor(np.zeros((7, 3))), Tensor(np.zeros(3))),
        ]
        with pytest.raises(ShapeError, match="chain"):
            mlp_forward(Tensor(np.zeros((1, 4))), layers)

    def test_gradients(self):
        rng = np.random.default_rng(2)
        layers = [
            (Tensor(rng.standard_normal((4, 6)), requires_grad=True),
             Tensor(rng.standard_normal(6), requires_grad=True)),
            (Tensor(rng.standard_normal((6, 2)), requires_grad=True),
             Tensor(rng.standard_normal(2), requires_grad=True)),
        ]
        x = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        params = [x] + [t for pair in layers for t in pair]
        err = check_gradients(lambda: (mlp_forward(x, layers) ** 2).sum(), params)
        assert err < 1e-4


class TestAdamW:
    def test_zero_gradient_leaves_params_unchanged(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        before = p.data.copy()
        opt = AdamW([p], lr=0.1, weight_decay=0.0)
        p.grad = np.zeros(2)
        opt.step()
        assert np.array_equal(p.data, before)

    def test_descends_on_square(self):
        w = Tensor([1.0], requires_grad=True)
        opt = AdamW([w], lr=0.05)
        loss = (w * w).sum()
        loss.backward()
        opt.step()
        assert abs(w.data[0]) < 1.0

    def test_three_steps_match_hand_trace(self):
        # f(w) = 2 w0^2 + 0.5 w1^2, grad = (4 w0, w1)
        lr, wd, b1, b2, eps = 0.1, 0.01, 0.9, 0.999, 1e-8
        w = Tensor([1.0, -3.0], requires_grad=True)
        opt = AdamW([w], lr=lr, betas=(b1, b2), eps=eps, weight_decay=wd)

        ref = [1.0, -3.0]
        m = [0.0, 0.0]
        v = [0.0, 0.0]
        for t in range(1, 4):
            grads = [4.0 * ref[0], 1.0 * ref[1]]
            loss = (2.0 * w * w * Tensor([1.0, 0.0]) + 0.5 * w * w * Tensor([0.0, 1.0])).sum()
            opt.zero_grad()
            loss.backward()
            opt.step()
            for i in range(2):
                m[i] = b1 * m[i] + (1 - b1) * grads[i]
                v[i] = b2 * v[i] + (1 - b2) * grads[i] ** 2
                m_hat = m[i] / (1 - b1**t)
                v_hat = v[i] / (1 - b2**t)
                ref[i] = ref[i] - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * ref[i])
            assert np.allclose(w.data, ref, atol=1e-12), f"diverged at step {t}"

    def test_deterministic_given_state(self):
        def run():
            p = Tensor([0.5, 0.25], requires_grad=True)
            opt = AdamW([p], lr=0.01, weight_decay=0.1)
            for _ in range(5):
                loss = (p * p).sum()
                opt.zero_grad()
                loss.backward()
                opt.step()
            return p.data

        assert np.array_equal(run(), run())


class TestLossAndActivations:
    def test_bce_at_zero_logits_is_ln2(self):
        logits = Tensor(np.zeros((4, 3)))
        loss = bce_with_logits(logits, np.random.default_rng(0).integers(0, 2, (4, 3)))
        assert loss.item() == pytest.approx(math.log(2.0), abs=1e-12)

    def test_sigmoid_softplus_stable_at_extremes(self):
        x = Tensor([-800.0, 800.0])
        assert np.all(np.isfinite(sigmoid(x).data))
        assert np.all(np.isfinite(softplus(x).data))

    def test_sigmoid_softplus_gradients(self):
        x = Tensor(np.random.default_rng(4).standard_normal(8), requires_grad=True)
        for fn in (sigmoid, softplus):
            x.grad = None
            err = check_gradients(lambda: fn(x).sum(), [x])
            assert err < 1e-4


@pytest.mark.parametrize(
    "build",
    [
        lambda x: (x + Tensor([0.5, -1.0, 2.0])).sum(),
        lambda x: (Tensor([2.0, 0.5, -1.5]) - x).sum(),
        lambda x: (x * x + 3.0 * x).sum(),
        lambda x: (x / Tensor([2.0, 4.0, -3.0])).sum(),
        lambda x: (Tensor([1.0, 2.0, 3.0]) / (x * x + 2.0)).sum(),
        lambda x: (-x).sum(),
        lambda x: ((x * x + 1.0) ** 1.5).sum(),
        lambda x: (x * x).mean(),
        lambda x: (x.reshape(3, 1) * Tensor([[2.0], [1.0], [0.5]])).sum(),
        lambda x: (x * x + 0.1).log().sum(),
        lambda x: x.exp().sum(),
    ],
    ids=["add", "rsub", "mul", "div", "rdiv", "neg", "pow", "mean", "reshape", "log", "exp"],
)
def test_elementwise_gradients(build):
    x = Tensor([0.4, -1.2, 2.1], requires_grad=True)
    assert check_gradients(lambda: build(x), [x]) < 1e-4


class TestStructuralOps:
    def test_concat_then_split_inverse(self):
        rng = np.random.default_rng(9)
        parts = [rng.standard_normal((2, k)) for k in (3, 1, 4)]
        out = concat([Tensor(p) for p in parts], axis=1).data
        starts = np.cumsum([0] + [p.shape[1] for p in parts])
        for p, s, e in zip(parts, starts[:-1], starts[1:]):
            assert np.array_equal(out[:, s:e], p)

    def test_gather_rows_gradients(self):
        x = Tensor(np.random.default_rng(1).standard_normal((5, 3)), requires_grad=True)
        err = check_gradients(lambda: (gather_rows(x, [0, 2, 2]) ** 2).sum(), [x])
        assert err < 1e-4

    def test_backward_accumulates_once_per_call(self):
        x = Tensor([2.0], requires_grad=True)
        y = (x * 3.0 + x * x).sum()  # x used twice in one graph
        y.backward()
        assert x.grad[0] == pytest.approx(3.0 + 2.0 * 2.0)

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            (x * 2.0).backward()

    def test_max_relative_error_helper(self):
        assert max_relative_error(np.array([1.0]), np.array([1.0])) == 0.0
        assert max_relative_error(np.array([2.0]), np.array([1.0])) == pytest.approx(0.5)
