import numpy as np
import pytest

from panlab import selftest
from panlab import tensor as t
from panlab.exceptions import (
    ConfigurationError, DataError, NumericError, UsageError
)


@pytest.mark.parametrize("name", sorted(selftest._op_cases()))
def test_backward_matches_finite_differences(name):
    assert selftest.check_operation(name, trials=10, seed=1) \
        <= selftest.OP_TOLERANCE


def test_conv2d_output_shape_and_value():
    x = t.Tensor(np.ones((1, 2, 5, 5)))
    w = t.Tensor(np.ones((3, 2, 3, 3)))
    out = t.conv2d(x, w, t.Tensor(np.arange(3.)), pad=1)
    assert out.shape == (1, 3, 5, 5)
    # interior sees 2 channels x 9 taps, corners 2 x 4
    assert out.data[0, 0, 2, 2] == 18
    assert out.data[0, 0, 0, 0] == 8
    assert out.data[0, 2, 2, 2] == 20


@pytest.mark.parametrize("weight_shape, kwargs", [
    ((3, 4, 3, 3), {}),                 # channel mismatch
    ((3, 2, 2, 2), {}),                 # even kernel
    ((3, 2, 3, 3), {"stride": 2}),      # inexact extent: (6 - 3) % 2
])
def test_conv2d_rejects_bad_geometry(weight_shape, kwargs):
    x = t.Tensor(np.zeros((1, 2, 6, 6)))
    with pytest.raises(ConfigurationError):
        t.conv2d(x, t.Tensor(np.zeros(weight_shape)), **kwargs)


def test_maxpool_routes_gradient_to_first_maximum():
    x = t.Tensor(np.array([[[[1., 3., 3., 0.],
                             [3., 2., 0., 0.]]]]), requires_grad=True)
    with t.Tape() as tape:
        loss = t.reduce_sum(t.maxpool2d(x))
        t.backward(tape, loss)
    # left window: max 3 first at (0, 1); right window: max 3 at (0, 2)
    np.testing.assert_array_equal(x.grad[0, 0, :, :2], [[0, 1], [0, 0]])
    np.testing.assert_array_equal(x.grad[0, 0, :, 2:], [[1, 0], [0, 0]])


def test_backward_requires_scalar_loss_on_tape():
    x = t.Tensor(np.ones((2, 2)), requires_grad=True)
    with t.Tape() as tape:
        y = t.multiply(x, x)
        with pytest.raises(UsageError):
            t.backward(tape, y)
    with t.Tape() as other:
        pass
    with t.Tape() as tape:
        loss = t.reduce_sum(t.multiply(x, x))
    with pytest.raises(UsageError):
        t.backward(other, loss)


def test_nothing_is_recorded_without_a_tape():
    x = t.Tensor(np.ones(3), requires_grad=True)
    y = t.multiply(x, x)
    assert y.tape_id is None
    assert t.active_tape() is None


def test_gradients_accumulate_until_cleared():
    x = t.Tensor(np.array([1., 2.]), requires_grad=True)
    for _ in range(2):
        with t.Tape() as tape:
            t.backward(tape, t.reduce_sum(t.multiply(x, x)))
    np.testing.assert_allclose(x.grad, [4., 8.])
    t.zero_grad([x])
    assert x.grad is None


def test_spatial_softmax_normalizes_every_map():
    scores = t.Tensor(np.random.default_rng(0).normal(0, 10, (3, 1, 6, 6)))
    alpha = t.spatial_softmax(scores)
    np.testing.assert_allclose(alpha.data.sum(axis=(2, 3)), 1, atol=1e-5)
    assert (alpha.data >= 0).all()


def test_spatial_softmax_of_constant_scores_is_uniform():
    alpha = t.spatial_softmax(t.Tensor(np.full((1, 1, 4, 4), 7.)))
    np.testing.assert_allclose(alpha.data, 1 / 16.)


def test_spatial_softmax_puts_all_mass_on_infinite_scores():
    data = np.zeros((3, 1, 2, 2))
    data[0, 0, 0, 0] = np.inf
    data[1, 0, 0, 1] = data[1, 0, 1, 1] = np.inf
    data[2] = [[[1., 2.], [3., 4.]]]
    scores = t.Tensor(data, requires_grad=True)
    weights = t.Tensor(np.arange(12.).reshape(3, 1, 2, 2))
    with t.Tape() as tape:
        alpha = t.spatial_softmax(scores)
        t.backward(tape, t.reduce_sum(t.multiply(alpha, weights)))
    np.testing.assert_array_equal(alpha.data[0, 0], [[1, 0], [0, 0]])
    np.testing.assert_array_equal(alpha.data[1, 0], [[0, .5], [0, .5]])
    assert np.isfinite(alpha.data).all()
    np.testing.assert_allclose(alpha.data[2].sum(), 1, atol=1e-6)
    assert (scores.grad[:2] == 0).all()
    assert np.abs(scores.grad[2]).sum() > 0


def test_attend_with_unit_map_is_identity():
    feature = t.Tensor(np.random.default_rng(1).normal(size=(2, 3, 4, 4)))
    out = t.attend(feature, t.Tensor(np.ones((2, 1, 4, 4))))
    assert np.array_equal(out.data, feature.data)


def test_attend_rejects_mismatched_map():
    with pytest.raises(ConfigurationError):
        t.attend(t.Tensor(np.ones((1, 2, 4, 4))),
                 t.Tensor(np.ones((1, 1, 2, 2))))


def test_cross_entropy_of_uniform_logits_is_log_k():
    loss = t.softmax_cross_entropy(t.Tensor(np.zeros((4, 5))),
                                   np.array([0, 1, 2, 4]))
    assert loss.item() == pytest.approx(np.log(5), rel=1e-6)


def test_cross_entropy_label_errors():
    logits = t.Tensor(np.zeros((2, 5)))
    with pytest.raises(DataError):
        t.softmax_cross_entropy(logits, np.array([0, 5]))
    with pytest.raises(DataError):
        t.softmax_cross_entropy(logits, np.array([0., 1.]))


def test_nll_needs_normalized_rows():
    with pytest.raises(NumericError):
        t.nll_of_probability(t.Tensor(np.full((2, 5), 0.3)),
                             np.array([0, 1]))
    loss = t.nll_of_probability(t.Tensor(np.full((2, 5), 0.2)),
                                np.array([0, 1]))
    assert loss.item() == pytest.approx(-np.log(0.2), rel=1e-5)


def test_numeric_gradient_of_square():
    x = t.Tensor(np.array([1., -2., 3.]), dtype=np.float64)
    grad = t.numeric_gradient(
        lambda v: t.reduce_sum(t.multiply(v, v)), x, h=1e-4)
    np.testing.assert_allclose(grad.data, [2., -4., 6.], rtol=1e-6)


def test_float32_is_the_default_storage():
    assert t.Tensor([1, 2]).dtype == np.float32
    assert t.Tensor([1, 2], dtype=np.float64).dtype == np.float64
