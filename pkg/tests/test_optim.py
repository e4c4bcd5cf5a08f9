import numpy as np
import pytest

from adgs.optim import Adam, LearningRates, NaNGradient, position_lr


def adam_by_hand(x, g, lr, steps, b1=0.9, b2=0.999, eps=1e-15):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh = m / (1 - b1 ** t)
        vh = v / (1 - b2 ** t)
        x = x - lr * mh / (vh ** 0.5 + eps)
        out.append(x)
    return out


@pytest.mark.parametrize("g", [0.3, -2.5, 1e-4])
def test_scalar_trajectory(g):
    opt = Adam()
    p = np.array([1.5])
    want = adam_by_hand(1.5, g, 0.01, 50)
    for t in range(50):
        opt.step("x", p, np.array([g]), 0.01)
        assert p[0] == pytest.approx(want[t], abs=1e-10)


def test_zero_gradient_leaves_parameters_and_counts_the_step():
    opt = Adam()
    p = np.array([1.0, -2.0, 3.0])
    opt.step("x", p, np.zeros(3), 0.1)
    opt.step("x", p, np.zeros(3), 0.1)
    np.testing.assert_array_equal(p, [1.0, -2.0, 3.0])
    assert opt.t["x"] == 2


def test_non_finite_gradient_raises():
    with pytest.raises(NaNGradient):
        Adam().step("x", np.zeros(2), np.array([1.0, np.nan]), 0.1)


def test_float32_parameters_are_updated_in_place():
    p = np.ones(4, dtype=np.float32)
    Adam().step("x", p, np.ones(4), 0.01)
    assert p.dtype == np.float32
    np.testing.assert_allclose(p, 0.99, rtol=1e-6)


def test_remap_keeps_survivors_and_zeros_new_rows(rng):
    opt = Adam()
    p = np.zeros((4, 3))
    opt.step("x", p, rng.normal(size=(4, 3)), 0.1)
    m_old, v_old = opt.m["x"].copy(), opt.v["x"].copy()
    opt.remap("x", np.array([3, 0, -1]))
    np.testing.assert_array_equal(opt.m["x"][:2], m_old[[3, 0]])
    np.testing.assert_array_equal(opt.v["x"][:2], v_old[[3, 0]])
    assert not opt.m["x"][2].any() and not opt.v["x"][2].any()
    opt.remap("never-stepped", np.array([0]))


def test_state_round_trip(rng):
    opt = Adam()
    p = rng.normal(size=5)
    for _ in range(3):
        opt.step("x", p, rng.normal(size=5), 0.1)
    other = Adam()
    other.load_state(opt.state())
    p1, p2 = p.copy(), p.copy()
    g = rng.normal(size=5)
    opt.step("x", p1, g, 0.1)
    other.step("x", p2, g, 0.1)
    assert np.array_equal(p1, p2)


def test_position_schedule_endpoints():
    r = LearningRates()
    assert position_lr(0, 2000, r) == pytest.approx(0.00016, rel=1e-12)
    assert position_lr(2000, 2000, r) == pytest.approx(0.0000016, rel=1e-12)
    assert position_lr(1000, 2000, r) == pytest.approx(np.sqrt(0.00016 * 0.0000016), rel=1e-12)
    assert position_lr(0, 2000, r, extent=2.5) == pytest.approx(0.0004, rel=1e-12)


def test_position_schedule_delay_ramp():
    r = LearningRates(position_delay_steps=100, position_delay_mult=0.01)
    assert position_lr(0, 1000, r) == pytest.approx(0.01 * 0.00016, rel=1e-12)
    assert position_lr(100, 1000, r) == pytest.approx(position_lr(100, 1000, LearningRates()), rel=1e-12)
