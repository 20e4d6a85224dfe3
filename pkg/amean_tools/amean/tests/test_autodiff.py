#!/usr/bin/env python3

"""
Module  amean/tests/test_autodiff.py
"""
import numpy as np
import pytest

from amean import autodiff as ad
from amean.autodiff import Tensor
from amean.errors import ContractError, DimensionError, DomainError
from amean.tests.conftest import check_gradients


SEEDS = range(20)


def _away_from_zero(rng, shape, low=0.1, high=1.5):
    return rng.uniform(low, high, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _case(name: str, rng: np.random.Generator):
    """(scalar fn, params) for one primitive; outputs are contracted with fixed random weights."""
    P = ad.parameter

    def contract(out_fn, shape):
        W = rng.normal(size=shape)
        return lambda: ad.tsum(out_fn() * W)

    if name == "matmul":
        a, b = P(rng.normal(size=(3, 4))), P(rng.normal(size=(4, 2)))
        return contract(lambda: ad.matmul(a, b), (3, 2)), [a, b]
    if name == "add_row":
        a, b = P(rng.normal(size=(3, 4))), P(rng.normal(size=(4,)))
        return contract(lambda: ad.add(a, b), (3, 4)), [a, b]
    if name == "sub_column":
        a, b = P(rng.normal(size=(3, 4))), P(rng.normal(size=(3, 1)))
        return contract(lambda: ad.sub(a, b), (3, 4)), [a, b]
    if name == "mul":
        a, b = P(rng.normal(size=(3, 4))), P(rng.normal(size=(3, 4)))
        return contract(lambda: ad.mul(a, b), (3, 4)), [a, b]
    if name == "mul_scalar":
        a, s = P(rng.normal(size=(3, 4))), P(rng.normal())
        return contract(lambda: a * s, (3, 4)), [a, s]
    if name == "div":
        a, b = P(rng.normal(size=(3, 4))), P(_away_from_zero(rng, (3, 4), 0.5, 2.0))
        return contract(lambda: ad.div(a, b), (3, 4)), [a, b]
    if name == "neg":
        a = P(rng.normal(size=(3, 4)))
        return contract(lambda: ad.neg(a), (3, 4)), [a]
    if name == "pow":
        a = P(rng.uniform(0.5, 2.0, size=(3, 4)))
        return contract(lambda: ad.power(a, 3.0), (3, 4)), [a]
    if name == "relu":
        a = P(_away_from_zero(rng, (3, 4)))
        return contract(lambda: ad.relu(a), (3, 4)), [a]
    if name == "leaky_relu":
        a = P(_away_from_zero(rng, (3, 4)))
        return contract(lambda: ad.leaky_relu(a, 0.1), (3, 4)), [a]
    if name == "sigmoid":
        a = P(rng.normal(size=(3, 4)))
        return contract(lambda: ad.sigmoid(a), (3, 4)), [a]
    if name == "softmax":
        a = P(rng.normal(size=(3, 4)))
        return contract(lambda: ad.softmax(a), (3, 4)), [a]
    if name == "log":
        a = P(rng.uniform(0.5, 2.0, size=(3, 4)))
        return contract(lambda: ad.log(a), (3, 4)), [a]
    if name == "clip":
        # keep every value at least 0.05 from the bounds
        a = P(rng.choice([-1.0, 1.0], size=(3, 4)) * rng.choice([rng.uniform(0, 0.95), rng.uniform(1.05, 2)],
                                                                   size=(3, 4)))
        return contract(lambda: ad.clip(a, -1.0, 1.0), (3, 4)), [a]
    if name == "sum_axis":
        a = P(rng.normal(size=(3, 4)))
        return contract(lambda: ad.tsum(a, axis=0), (4,)), [a]
    if name == "mean_keepdims":
        a = P(rng.normal(size=(3, 4)))
        return contract(lambda: ad.mean(a, axis=1, keepdims=True), (3, 1)), [a]
    if name == "mean_all":
        a = P(rng.normal(size=(3, 4)))
        return (lambda: ad.mean(a * a)), [a]
    if name == "concat":
        a, b = P(rng.normal(size=(3, 2))), P(rng.normal(size=(3, 3)))
        return contract(lambda: ad.concat([a, b]), (3, 5)), [a, b]
    if name == "columns":
        a = P(rng.normal(size=(3, 5)))
        return contract(lambda: ad.columns(a, 1, 4), (3, 3)), [a]
    if name == "transpose":
        a = P(rng.normal(size=(3, 4)))
        return contract(lambda: ad.transpose(a), (4, 3)), [a]
    if name == "mse":
        a, b = P(rng.normal(size=(3, 4))), P(rng.normal(size=(3, 4)))
        return (lambda: ad.mse(a, b)), [a, b]
    if name == "dropout":
        a = P(rng.normal(size=(3, 4)))
        return contract(lambda: ad.dropout(a, 0.3, np.random.default_rng(0)), (3, 4)), [a]
    raise KeyError(name)


PRIMITIVES = ["matmul", "add_row", "sub_column", "mul", "mul_scalar", "div", "neg", "pow", "relu",
              "leaky_relu", "sigmoid", "softmax", "log", "clip", "sum_axis", "mean_keepdims", "mean_all",
              "concat", "columns", "transpose", "mse", "dropout"]


@pytest.mark.parametrize("seed", SEEDS)
@pytest.mark.parametrize("name", PRIMITIVES)
def test_primitive_gradients(name, seed):
    fn, params = _case(name, np.random.default_rng(1000 * seed + len(name)))
    check_gradients(fn, params)


class TestGradReverse:

    def test_forward_is_bit_exact_identity(self):
        a = ad.parameter(np.random.default_rng(0).normal(size=(4, 3)))
        out = ad.grad_reverse(a, 0.5)
        assert np.array_equal(out.data, a.data)
        assert out.data is not a.data

    @pytest.mark.parametrize("scale", [0.0, 0.5, 1.0])
    def test_backward_is_negated_scaled_upstream(self, scale):
        rng = np.random.default_rng(1)
        a = ad.parameter(rng.normal(size=(4, 3)))
        W = rng.normal(size=(4, 3))
        (g,) = ad.grad(ad.tsum(ad.grad_reverse(a, scale) * W), [a])
        assert np.array_equal(g, -scale * W)

    def test_non_finite_scale_rejected(self):
        with pytest.raises(ContractError, match="finite"):
            ad.grad_reverse(Tensor([1.0]), float("inf"))

    def test_double_reversal_restores_sign(self):
        a = ad.parameter([1.0, 2.0])
        (g,) = ad.grad(ad.tsum(ad.grad_reverse(ad.grad_reverse(a)) * 3.0), [a])
        assert np.array_equal(g, [3.0, 3.0])


class TestGraph:

    def test_shared_subexpression_accumulates(self):
        x = ad.parameter(np.array([1.5, -2.0]))
        y = ad.tsum(x * x + x)
        ad.backward(y)
        np.testing.assert_allclose(x.grad, 2 * x.data + 1)

    def test_backward_accumulates_across_calls(self):
        x = ad.parameter(np.array([2.0]))
        ad.backward(ad.tsum(x * 3.0))
        ad.backward(ad.tsum(x * 3.0))
        assert x.grad[0] == pytest.approx(6.0)
        x.zero_grad()
        assert x.grad[0] == 0.0

    def test_grad_leaves_grad_fields_untouched(self):
        x = ad.parameter(np.array([1.0, 2.0]))
        (g,) = ad.grad(ad.tsum(x * x), [x])
        np.testing.assert_allclose(g, [2.0, 4.0])
        assert np.all(x.grad == 0)

    def test_unreached_input_gets_zeros(self):
        x, y = ad.parameter([1.0]), ad.parameter([[1.0, 2.0]])
        gx, gy = ad.grad(ad.tsum(x * 2.0), [x, y])
        assert gx[0] == 2.0
        assert np.array_equal(gy, np.zeros((1, 2)))

    def test_constants_have_no_parents(self):
        out = Tensor([1.0, 2.0]) * 3.0
        assert not out.requires_grad
        assert out._parents == ()

    def test_detach_cuts_the_graph(self):
        x = ad.parameter([1.0, 2.0])
        (g,) = ad.grad(ad.tsum(x.detach() * x), [x])
        np.testing.assert_allclose(g, [1.0, 2.0])

    def test_numpy_left_operand_dispatches_to_tensor(self):
        x = ad.parameter([1.0, 2.0])
        out = np.array([2.0, 3.0]) * x
        assert isinstance(out, Tensor)
        np.testing.assert_allclose(out.data, [2.0, 6.0])


class TestContracts:

    def test_matmul_shape_mismatch(self):
        with pytest.raises(DimensionError, match="matmul"):
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    @pytest.mark.parametrize("shapes", [((3, 4), (4, 3)), ((3, 4), (3,)), ((3, 4), (1, 4))])
    def test_disallowed_broadcast(self, shapes):
        a, b = shapes
        with pytest.raises(DimensionError):
            ad.add(Tensor(np.ones(a)), Tensor(np.ones(b)))

    def test_log_of_non_positive(self):
        with pytest.raises(DomainError):
            ad.log(Tensor([1.0, 0.0]))

    def test_backward_needs_scalar(self):
        x = ad.parameter(np.ones((2, 2)))
        with pytest.raises(ContractError, match="scalar"):
            ad.backward(x * 2.0)

    def test_item_needs_single_value(self):
        with pytest.raises(ContractError):
            Tensor([1.0, 2.0]).item()

    def test_concat_row_mismatch(self):
        with pytest.raises(DimensionError, match="concat"):
            ad.concat([Tensor(np.ones((2, 2))), Tensor(np.ones((3, 2)))])

    def test_softmax_rows_on_simplex(self):
        out = ad.softmax(Tensor(np.random.default_rng(0).normal(scale=50, size=(10, 5))))
        np.testing.assert_allclose(out.data.sum(axis=1), 1.0, atol=1e-9)
        assert np.all(out.data >= 0)

    def test_dropout_identity_when_not_training(self):
        x = Tensor(np.ones((2, 3)))
        assert ad.dropout(x, 0.5, np.random.default_rng(0), training=False) is x
