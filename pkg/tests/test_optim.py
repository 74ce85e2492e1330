"""Optimizer update rules checked against hand-computed steps."""

import numpy as np
import pytest

from advkit.autodiff import Tensor
from advkit.errors import NumericError, ShapeError
from advkit.optim import Adadelta, Adam, SGD, make_optimizer


def _param(values):
    t = Tensor(np.asarray(values, dtype=np.float64), requires_grad=True)
    return t


def test_sgd_single_step():
    p = _param([1.0, -2.0])
    p.grad = np.array([0.5, 0.5])
    SGD([p], learning_rate=0.1).step()
    np.testing.assert_allclose(p.data, [0.95, -2.05])


def test_adam_first_step_moves_by_learning_rate():
    # With bias correction, the very first Adam step is
    # lr * g / (|g| + eps) = lr * sign(g), regardless of gradient scale.
    for scale in (1e-4, 1.0, 1e4):
        p = _param([1.0])
        p.grad = np.array([scale])
        Adam([p], learning_rate=0.01).step()
        exact = 0.01 * scale / (scale + 1e-8)
        np.testing.assert_allclose(p.data, [1.0 - exact], rtol=1e-12)
        assert exact == pytest.approx(0.01, rel=1e-3)


def test_adam_second_step_hand_value():
    p = _param([0.0])
    opt = Adam([p], learning_rate=0.1)
    g1, g2 = 1.0, 2.0
    p.grad = np.array([g1])
    opt.step()
    p.grad = np.array([g2])
    opt.step()

    m = 0.9 * (0.1 * g1) + 0.1 * g2
    v = 0.999 * (0.001 * g1 * g1) + 0.001 * g2 * g2
    m_hat = m / (1 - 0.9**2)
    v_hat = v / (1 - 0.999**2)
    step1 = 0.1 * g1 / (abs(g1) + 1e-8)
    expected = -step1 - 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    np.testing.assert_allclose(p.data, [expected], rtol=1e-12)


def test_adam_states_are_per_parameter():
    a, b = _param([0.0]), _param([0.0])
    opt = Adam([a, b], learning_rate=0.5)
    a.grad = np.array([1.0])
    b.grad = np.array([-1.0])
    opt.step()
    assert a.data[0] == pytest.approx(-0.5, rel=1e-6)
    assert b.data[0] == pytest.approx(0.5, rel=1e-6)


def test_adadelta_first_step_hand_value():
    p = _param([1.0])
    opt = Adadelta([p], learning_rate=1.0)
    g = 2.0
    p.grad = np.array([g])
    opt.step()
    acc_grad = 0.05 * g * g
    delta = np.sqrt(1e-6) / np.sqrt(acc_grad + 1e-6) * g
    np.testing.assert_allclose(p.data, [1.0 - delta], rtol=1e-12)


def test_none_gradient_is_skipped():
    p, q = _param([1.0]), _param([2.0])
    q.grad = np.array([1.0])
    opt = SGD([p, q], learning_rate=1.0)
    opt.step()
    assert p.data[0] == 1.0
    assert q.data[0] == 1.0


def test_zero_grad_clears_all():
    p = _param([1.0])
    p.grad = np.array([3.0])
    opt = SGD([p], learning_rate=1.0)
    opt.zero_grad()
    assert p.grad is None


def test_all_nan_gradient_rejected():
    p = _param([1.0])
    p.grad = np.array([np.nan])
    with pytest.raises(NumericError):
        Adam([p], learning_rate=0.1).step()


def test_shape_mismatch_rejected():
    p = _param([1.0, 2.0])
    p.grad = np.array([1.0])
    with pytest.raises(ShapeError):
        SGD([p], learning_rate=0.1).step()


def test_factory_names():
    p = _param([0.0])
    assert isinstance(make_optimizer("sgd", [p], 0.1), SGD)
    assert isinstance(make_optimizer("adam", [p], 0.1), Adam)
    assert isinstance(make_optimizer("adadelta", [p], 1.0), Adadelta)
    with pytest.raises(ValueError):
        make_optimizer("rmsprop", [p], 0.1)


def test_adam_converges_on_quadratic():
    p = _param([5.0])
    opt = Adam([p], learning_rate=0.1)
    for _ in range(400):
        opt.zero_grad()
        ((p - 3.0) * (p - 3.0)).sum().backward()
        opt.step()
    assert p.data[0] == pytest.approx(3.0, abs=1e-3)
