import numpy as np
import pytest

from kbctransfer.errors import TrainingError
from kbctransfer.optim import AdamState, adam_step
from kbctransfer.tensor import Tensor


def params_of(values):
    return {"w": Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)}


def test_zero_gradient_leaves_parameter():
    p = params_of([1.0, -2.0])
    adam_step(p, {"w": np.zeros(2)}, AdamState(lr=0.1))
    np.testing.assert_array_equal(p["w"].data, [1.0, -2.0])


def test_first_step_moves_by_learning_rate():
    p = params_of([0.5, 0.5, 0.5])
    g = np.array([3.0, -0.01, 1e-3])
    adam_step(p, {"w": g}, AdamState(lr=0.01))
    # closed form: m_hat = g, v_hat = g^2, step = lr * g / (|g| + eps)
    expected = 0.5 - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p["w"].data, expected, rtol=1e-12)
    np.testing.assert_allclose(np.abs(p["w"].data - 0.5), 0.01, rtol=1e-4)


def test_matches_reference_recursion_over_steps():
    rng = np.random.default_rng(0)
    p = params_of(rng.standard_normal(4))
    ref = p["w"].data.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    state = AdamState(lr=0.003)
    for t in range(1, 6):
        g = rng.standard_normal(4)
        adam_step(p, {"w": g}, state)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref = ref - 0.003 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert state.step == t
        assert state.m["w"].shape == p["w"].shape
    np.testing.assert_allclose(p["w"].data, ref, rtol=1e-12)


def test_repeated_gradient_moves_monotonically():
    p = params_of([0.0])
    state = AdamState(lr=0.1)
    trail = []
    for _ in range(2):
        adam_step(p, {"w": np.array([2.0])}, state)
        trail.append(p["w"].data[0])
    assert 0.0 > trail[0] > trail[1]


def test_non_finite_gradient_names_parameter():
    p = params_of([1.0])
    with pytest.raises(TrainingError, match="'w'"):
        adam_step(p, {"w": np.array([np.nan])}, AdamState())


def test_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step(params_of([1.0, 2.0]), {"w": np.zeros(3)}, AdamState())


def test_float32_parameters_stay_float32():
    p = {"w": Tensor(np.ones(3, dtype=np.float32), requires_grad=True)}
    adam_step(p, {"w": np.ones(3, dtype=np.float32)}, AdamState())
    assert p["w"].data.dtype == np.float32
