import numpy as np

from kbctransfer import tensor as T
from kbctransfer.gradcheck import check_directional, check_gradients, numeric_gradient, relative_error
from kbctransfer.tensor import Tensor


def quadratic():
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    return x, lambda: (x * x).sum()


def test_numeric_gradient_of_a_quadratic():
    with T.default_dtype(np.float64):
        x, fn = quadratic()
        values, usable = numeric_gradient(fn, x, np.arange(3))
    np.testing.assert_allclose(values, 2 * x.data, atol=1e-8)
    assert usable.all()


def test_kink_crossings_are_flagged():
    with T.default_dtype(np.float64):
        x = Tensor(np.array([1e-7, 1.0]), requires_grad=True)
        _, usable = numeric_gradient(lambda: T.relu(x).sum(), x, np.arange(2), eps=1e-5)
    assert usable.tolist() == [False, True]


def test_relative_error_floor():
    assert relative_error(np.zeros(2), np.full(2, 1e-9)) < 1e-2
    assert relative_error(np.array([1.0]), np.array([1.1])) > 0.05


def test_both_checks_accept_correct_and_reject_wrong_gradients():
    with T.default_dtype(np.float64):
        x, fn = quadratic()
        rng = np.random.default_rng(0)
        assert max(check_gradients(fn, {"x": x}, rng).values()) < 1e-8
        assert max(check_directional(fn, {"x": x}, rng).values()) < 1e-8
        # a function whose recorded gradient is wrong: stop the gradient through one factor
        wrong = lambda: (x * Tensor(x.data.copy())).sum()
        assert max(check_gradients(wrong, {"x": x}, rng).values()) > 0.1
        assert max(check_directional(wrong, {"x": x}, rng).values()) > 0.1
