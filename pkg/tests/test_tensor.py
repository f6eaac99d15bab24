import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hyperod import tensor as tn


def fd_error(loss_fn, params):
    return tn.finite_diff_check(loss_fn, params, eps=1e-6)


@pytest.mark.parametrize("fn", [tn.tanh, tn.sigmoid, tn.softplus, tn.square])
def test_smooth_elementwise_grads(fn, rng):
    x = tn.parameter(rng.normal(size=(3, 4)))
    assert fd_error(lambda: tn.tsum(fn(x) * fn(x)), [x]) < 1e-5


def test_relu_grad_away_from_kink(rng):
    data = rng.normal(size=(5, 5))
    data[np.abs(data) < 0.1] = 0.5
    x = tn.parameter(data)
    assert fd_error(lambda: tn.tsum(tn.relu(x) * x), [x]) < 1e-6


def test_matmul_broadcast_grads(rng):
    a = tn.parameter(rng.normal(size=(2, 3, 4)))
    b = tn.parameter(rng.normal(size=(4, 5)))
    c = tn.parameter(rng.normal(size=(5,)))
    err = fd_error(lambda: tn.mean(tn.square(tn.matmul(a, b) + c)), [a, b, c])
    assert err < 1e-6


def test_reductions_and_shapes(rng):
    x = tn.parameter(rng.normal(size=(2, 3, 4)))
    err = fd_error(lambda: tn.tsum(tn.mean(x, axis=(1, 2)) * tn.sum_sq(x, axis=(1, 2))), [x])
    assert err < 1e-6
    err = fd_error(lambda: tn.sum_sq(tn.transpose_last(tn.reshape(x, (6, 4)))[1:3]), [x])
    assert err < 1e-6


def test_getitem_fancy_index_accumulates(rng):
    x = tn.parameter(rng.normal(size=(4,)))
    with tn.Tape() as tape:
        y = tn.tsum(x[np.array([0, 0, 2])])
    g = tn.backward(tape, y, [x])[x]
    np.testing.assert_array_equal(g, [2.0, 0.0, 1.0, 0.0])


def test_concat_grads(rng):
    a = tn.parameter(rng.normal(size=(2, 3)))
    b = tn.parameter(rng.normal(size=(2, 2)))
    assert fd_error(lambda: tn.sum_sq(tn.tanh(tn.concat([a, b], axis=-1))), [a, b]) < 1e-6


def test_shared_parameter_accumulates():
    x = tn.parameter(np.array([1.5, -2.0]))
    _, g = tn.value_and_grad(lambda: tn.tsum(x * x + x), [x])
    np.testing.assert_allclose(g[x], 2 * x.data + 1)


def test_backward_requires_scalar():
    x = tn.parameter(np.ones(3))
    with tn.Tape() as tape:
        y = x * 2.0
    with pytest.raises(tn.ContractError):
        tn.backward(tape, y)


def test_shape_mismatch_raises():
    with pytest.raises(tn.DimensionError):
        tn.add(np.ones((2, 3)), np.ones((4, 3)))


def test_non_finite_raises():
    with pytest.raises(tn.NumericError), np.errstate(invalid="ignore"):
        tn.mul(np.array([np.inf]), np.array([0.0]))


def test_no_tape_records_nothing():
    x = tn.parameter(np.ones(2))
    with tn.Tape() as tape:
        with tn.no_tape():
            x * 3.0
        assert len(tape) == 0
        x * 3.0
        assert len(tape) == 1


def test_untracked_param_gets_zero_grad():
    x = tn.parameter(np.ones(2))
    unused = tn.parameter(np.ones(3))
    _, g = tn.value_and_grad(lambda: tn.tsum(x), [x, unused])
    np.testing.assert_array_equal(g[unused], np.zeros(3))


def test_forward_op_dispatch(rng):
    a = rng.normal(size=(2, 3))
    np.testing.assert_allclose(tn.forward_op("elementwise", a, fn="tanh").data, np.tanh(a))
    np.testing.assert_allclose(tn.forward_op("hadamard", a, a).data, a * a)
    with pytest.raises(ValueError):
        tn.forward_op("conv", a)


def test_dropout_mask_scaling(rng):
    m = tn.dropout_mask((200, 200), 0.25, rng)
    assert set(np.unique(m)) <= {0.0, 1.0 / 0.75}
    assert abs(m.mean() - 1.0) < 0.02
    np.testing.assert_array_equal(tn.dropout_mask((3,), 0.0, rng), np.ones(3))


finite = st.floats(-3, 3, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 2), elements=finite), arrays(np.float64, (2,), elements=finite))
def test_add_bias_grad_is_column_sum(x, b):
    xt, bt = tn.parameter(x.copy()), tn.parameter(b.copy())
    _, g = tn.value_and_grad(lambda: tn.tsum(tn.add_bias(xt, bt) * x), [xt, bt])
    np.testing.assert_allclose(g[bt], x.sum(axis=0))
    np.testing.assert_allclose(g[xt], x)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4,), elements=finite))
def test_tanh_grad_closed_form(x):
    xt = tn.parameter(x.copy())
    _, g = tn.value_and_grad(lambda: tn.tsum(tn.tanh(xt)), [xt])
    np.testing.assert_allclose(g[xt], 1 - np.tanh(x) ** 2, atol=1e-15)
