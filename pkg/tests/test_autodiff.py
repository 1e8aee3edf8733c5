import math

import numpy as np
import pytest

from poselift import autodiff as ad
from poselift.autodiff import Tape, Tensor
from poselift.errors import ContractError, ShapeError

from helpers import finite_difference, max_rel_err


def tensor(data, requires_grad=False):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=requires_grad)


class TestMatmul:
    def test_identity(self):
        a = tensor(np.eye(2))
        b = tensor([[3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_array_equal(ad.matmul(a, b).data, b.data)

    def test_hand_product(self):
        a = tensor([[1.0, 2.0], [3.0, 4.0]])
        b = tensor([[0.0, 1.0], [1.0, 0.0]])
        np.testing.assert_array_equal(ad.matmul(a, b).data, [[2.0, 1.0], [4.0, 3.0]])

    def test_grad_of_sum_is_column_sums_of_b(self):
        rng = np.random.default_rng(0)
        a_val = rng.normal(size=(3, 4))
        b_val = rng.normal(size=(4, 5))
        a = tensor(a_val, requires_grad=True)
        with Tape() as tape:
            loss = ad.matmul(a, tensor(b_val)).sum()
            tape.backward(loss)
        expected = np.tile(b_val.sum(axis=1), (3, 1))
        np.testing.assert_allclose(a.grad, expected, rtol=1e-12)
        fd = finite_difference(lambda x: (x @ b_val).sum(), a_val, step=1e-6)
        assert max_rel_err(a.grad, fd) < 1e-5

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(tensor(np.zeros((2, 3))), tensor(np.zeros((2, 3))))

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(4, 5, 3))
        w = rng.normal(size=(3, 2))
        batched = ad.matmul(tensor(x), tensor(w)).data
        for i in range(4):
            np.testing.assert_allclose(batched[i], x[i] @ w, rtol=1e-12)


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        x = tensor([[5.0, 5.0, 5.0, 5.0]])
        out = ad.layer_norm(x, tensor(np.ones(4)), tensor(np.zeros(4)), eps=1e-5)
        np.testing.assert_array_equal(out.data, np.zeros((1, 4)))

    def test_already_normalized_row_with_zero_eps(self):
        x = tensor([[1.0, -1.0]])
        out = ad.layer_norm(x, tensor(np.ones(2)), tensor(np.zeros(2)), eps=0.0)
        np.testing.assert_array_equal(out.data, [[1.0, -1.0]])

    def test_empty_feature_dim_rejected(self):
        with pytest.raises(ShapeError):
            ad.layer_norm(tensor(np.zeros((3, 0))), tensor(np.zeros(0)), tensor(np.zeros(0)))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        x_val = rng.normal(size=(4, 8))
        g_val = rng.normal(size=8)
        b_val = rng.normal(size=8)

        def run(xv, gv, bv):
            return ad.layer_norm(tensor(xv), tensor(gv), tensor(bv)).data

        x = tensor(x_val, requires_grad=True)
        gamma = tensor(g_val, requires_grad=True)
        beta = tensor(b_val, requires_grad=True)
        with Tape() as tape:
            out = ad.layer_norm(x, gamma, beta)
            loss = (out * out).sum()
            tape.backward(loss)

        for leaf, val, f in [
            (x, x_val, lambda v: (run(v, g_val, b_val) ** 2).sum()),
            (gamma, g_val, lambda v: (run(x_val, v, b_val) ** 2).sum()),
            (beta, b_val, lambda v: (run(x_val, g_val, v) ** 2).sum()),
        ]:
            fd = finite_difference(f, val)
            assert max_rel_err(leaf.grad, fd) < 1e-4


class TestElementwise:
    def test_gelu_values(self):
        assert ad.gelu(tensor(0.0)).item() == 0.0
        assert abs(ad.gelu(tensor(10.0)).item() - 10.0) < 1e-6
        expected = 1.0 * 0.5 * (1.0 + math.erf(1.0 / math.sqrt(2.0)))
        assert abs(ad.gelu(tensor(1.0)).item() - expected) < 1e-12
        assert abs(expected - 0.841345) < 1e-6

    def test_relu_definition_and_idempotence(self):
        np.testing.assert_array_equal(ad.relu(tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])
        rng = np.random.default_rng(3)
        x = tensor(rng.normal(size=20))
        once = ad.relu(x)
        np.testing.assert_array_equal(ad.relu(once).data, once.data)

    def test_relu_grad_is_positive_mask(self):
        rng = np.random.default_rng(4)
        x_val = rng.normal(size=30)
        x_val[np.abs(x_val) < 1e-3] = 0.5  # stay away from the kink
        x = tensor(x_val, requires_grad=True)
        with Tape() as tape:
            tape.backward(ad.relu(x).sum())
        np.testing.assert_array_equal(x.grad, (x_val > 0).astype(float))
        fd = finite_difference(lambda v: np.maximum(v, 0.0).sum(), x_val)
        assert max_rel_err(x.grad, fd) < 1e-4

    @pytest.mark.parametrize(
        "op,ref",
        [
            (ad.gelu, lambda v: v * 0.5 * (1.0 + np.vectorize(math.erf)(v / math.sqrt(2.0)))),
            (ad.exp_, np.exp),
            (ad.sqrt_, np.sqrt),
            (lambda t: ad.clamp(t, -0.5, 0.5), lambda v: np.clip(v, -0.5, 0.5)),
        ],
    )
    def test_gradients_match_finite_differences(self, op, ref):
        rng = np.random.default_rng(5)
        x_val = np.abs(rng.normal(size=16)) + 0.1
        x = tensor(x_val, requires_grad=True)
        with Tape() as tape:
            tape.backward(op(x).sum())
        fd = finite_difference(lambda v: ref(v).sum(), x_val)
        assert max_rel_err(x.grad, fd) < 1e-4

    def test_clamp_blocks_gradient_outside_range(self):
        x = tensor([-2.0, 0.0, 2.0], requires_grad=True)
        with Tape() as tape:
            tape.backward(ad.clamp(x, -1.0, 1.0).sum())
        np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])

    def test_sqrt_rejects_negative(self):
        with pytest.raises(ContractError):
            ad.sqrt_(tensor([-1.0]))


class TestShapeOps:
    def test_reshape_transpose_roundtrip_grads(self):
        rng = np.random.default_rng(6)
        x_val = rng.normal(size=(2, 3, 4))
        x = tensor(x_val, requires_grad=True)
        with Tape() as tape:
            y = ad.swap_last2(ad.reshape(x, (6, 4)).reshape((2, 3, 4)))
            tape.backward((y * y).sum())
        fd = finite_difference(lambda v: (v**2).sum(), x_val)
        assert max_rel_err(x.grad, fd) < 1e-4

    def test_take_grad_scatters(self):
        x = tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape() as tape:
            tape.backward(x[0].sum())
        np.testing.assert_array_equal(x.grad, [[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]])

    def test_concat_splits_gradient(self):
        a = tensor(np.ones((2, 2)), requires_grad=True)
        b = tensor(np.ones((3, 2)), requires_grad=True)
        with Tape() as tape:
            out = ad.concat([a, b], axis=0)
            tape.backward((out * tensor(np.arange(10.0).reshape(5, 2))).sum())
        np.testing.assert_array_equal(a.grad, [[0.0, 1.0], [2.0, 3.0]])
        np.testing.assert_array_equal(b.grad, [[4.0, 5.0], [6.0, 7.0], [8.0, 9.0]])

    def test_mean_with_axis(self):
        x = tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape() as tape:
            m = x.mean(axis=-1)
            tape.backward(m.sum())
        np.testing.assert_allclose(m.data, [1.0, 4.0])
        np.testing.assert_allclose(x.grad, np.full((2, 3), 1.0 / 3.0))


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = tensor(np.arange(5.0), requires_grad=True)
        with Tape() as tape:
            tape.backward(x.sum())
        np.testing.assert_array_equal(x.grad, np.ones(5))

    def test_square_gradient_is_2x(self):
        x_val = np.array([1.0, -2.0, 3.0])
        x = tensor(x_val, requires_grad=True)
        with Tape() as tape:
            tape.backward((x * x).sum())
        np.testing.assert_allclose(x.grad, 2.0 * x_val, rtol=1e-12)

    def test_repeated_backward_accumulates(self):
        x = tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            loss = x.sum()
            tape.backward(loss)
            tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_non_scalar_loss_rejected(self):
        x = tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = x * x
            with pytest.raises(ContractError):
                tape.backward(y)

    def test_untaped_loss_rejected(self):
        x = tensor([1.0], requires_grad=True)
        loss = x.sum()  # no tape active
        with pytest.raises(ContractError):
            ad.backward(loss)

    def test_one_backward_invocation_per_node(self):
        x = tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = (x * x + x).sum() * 2.0
            tape.backward(y)
        assert tape.backward_invocations == len(tape.nodes)
        assert len(tape.nodes) == 4  # mul, add, sum, scalar_mul


class TestInvariants:
    def test_finite_difference_agreement_over_seeds(self):
        # composite graph mixing most operators, 50 seeds
        for seed in range(50):
            rng = np.random.default_rng(seed)
            x_val = rng.normal(size=(3, 4)) + 0.05
            w_val = rng.normal(size=(4, 4))
            g_val = rng.normal(size=4)
            b_val = rng.normal(size=4)

            def f(xv):
                h = xv @ w_val
                mu = h.mean(axis=-1, keepdims=True)
                var = ((h - mu) ** 2).mean(axis=-1, keepdims=True)
                hn = g_val * ((h - mu) / np.sqrt(var + 1e-5)) + b_val
                act = hn * 0.5 * (1.0 + np.vectorize(math.erf)(hn / math.sqrt(2.0)))
                return (np.exp(np.clip(act, -3.0, 3.0) * 0.1)).mean()

            x = tensor(x_val, requires_grad=True)
            with Tape() as tape:
                h = ad.matmul(x, tensor(w_val))
                hn = ad.layer_norm(h, tensor(g_val), tensor(b_val), eps=1e-5)
                out = ad.clamp(ad.gelu(hn), -3.0, 3.0) * 0.1
                tape.backward(out.exp().mean())
            fd = finite_difference(f, x_val)
            assert max_rel_err(x.grad, fd) < 1e-4

    def test_forward_is_bitwise_deterministic(self):
        rng = np.random.default_rng(7)
        x_val = rng.normal(size=(8, 8))
        w_val = rng.normal(size=(8, 8))

        def run():
            out = ad.gelu(ad.matmul(tensor(x_val), tensor(w_val)))
            return ad.layer_norm(out, tensor(np.ones(8)), tensor(np.zeros(8))).data

        a, b = run(), run()
        assert np.array_equal(a, b)

    def test_non_finite_values_rejected(self):
        with pytest.raises(ContractError):
            Tensor(np.array([1.0, np.inf]))
        with pytest.raises(ContractError):
            ad.exp_(tensor(1e4))  # overflow to inf
