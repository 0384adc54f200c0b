import math

import numpy as np
import pytest

from amemnet.exceptions import DimensionError
from amemnet.optim import Adam, SGDMomentum, adam_step, sgd_momentum_step


def test_sgd_plain():
    p = {"w": np.array([1.0])}
    sgd_momentum_step(p, {"w": np.array([2.0])}, SGDMomentum(lr=0.1, momentum=0.0))
    np.testing.assert_allclose(p["w"], [0.8])


def test_sgd_momentum_two_steps():
    # v1 = 1, v2 = 0.9 * 1 + 1 = 1.9
    opt = SGDMomentum(lr=1.0, momentum=0.9)
    p = {"w": np.array([0.0])}
    opt.step(p, {"w": np.array([1.0])})
    assert p["w"][0] == -1.0
    opt.step(p, {"w": np.array([1.0])})
    assert p["w"][0] == pytest.approx(-2.9, abs=1e-15)


@pytest.mark.parametrize("opt", [SGDMomentum(lr=0.5), Adam(lr=0.5)])
def test_zero_gradient_fixed_point(opt):
    p = {"a": np.array([1.0, -2.0]), "b": np.eye(2)}
    before = {k: v.copy() for k, v in p.items()}
    opt.step(p, {k: np.zeros_like(v) for k, v in p.items()})
    for k in p:
        np.testing.assert_array_equal(p[k], before[k])


@pytest.mark.parametrize("c", [1e-3, -4.0, 250.0])
def test_adam_first_step_magnitude_is_lr(c):
    p = {"w": np.array([0.0])}
    adam_step(p, {"w": np.array([c])}, Adam(lr=1e-2))
    # m_hat = c, v_hat = c^2 -> update = lr * c / (|c| + eps)
    assert p["w"][0] == pytest.approx(-1e-2 * math.copysign(1.0, c), rel=1e-5)


def _scalar_adam(theta, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def test_adam_matches_scalar_reference():
    opt = Adam(lr=1e-3)
    p = {"w": np.array([0.5])}
    for g in (0.3, 0.3):
        opt.step(p, {"w": np.array([g])})
    assert p["w"][0] == pytest.approx(_scalar_adam(0.5, [0.3, 0.3]), abs=1e-15)
    assert opt.t == 2


def test_adam_step_counter():
    opt = Adam()
    p = {"w": np.zeros(3)}
    for k in range(7):
        opt.step(p, {"w": np.ones(3)})
    assert opt.t == 7
    assert np.all(opt.v["w"] >= 0)


def test_order_independence():
    rng = np.random.default_rng(0)
    g = {"a": rng.normal(size=3), "b": rng.normal(size=(2, 2))}
    p1 = {"a": np.ones(3), "b": np.ones((2, 2))}
    p2 = {"b": np.ones((2, 2)), "a": np.ones(3)}
    o1, o2 = Adam(lr=0.1), Adam(lr=0.1)
    o1.step(p1, g)
    o2.step(p2, {"b": g["b"], "a": g["a"]})
    for k in p1:
        assert p1[k].tobytes() == p2[k].tobytes()


@pytest.mark.parametrize("opt", [SGDMomentum(), Adam()])
def test_shape_mismatch(opt):
    with pytest.raises(DimensionError):
        opt.step({"w": np.zeros(3)}, {"w": np.zeros(2)})


def test_clipping_is_off_by_default_and_optional():
    p = {"w": np.array([0.0])}
    SGDMomentum(lr=1.0, momentum=0.0).step(p, {"w": np.array([10.0])})
    assert p["w"][0] == -10.0
    p = {"w": np.array([0.0])}
    SGDMomentum(lr=1.0, momentum=0.0, clip_norm=1.0).step(p, {"w": np.array([10.0])})
    assert p["w"][0] == -1.0


def test_bad_momentum():
    with pytest.raises(ValueError):
        SGDMomentum(momentum=1.0)
