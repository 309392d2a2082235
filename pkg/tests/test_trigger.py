import numpy as np
import pytest

from trigward.errors import ConfigurationError, ContractError
from trigward.trigger import (Trigger, apply_trigger, init_fixed_trigger,
                              init_learnable_trigger, update_learnable_trigger)

SHAPE = (3, 16, 16)


def test_fixed_trigger_values_are_exactly_pm_eps():
    eps = 8 / 255
    t = init_fixed_trigger(SHAPE, eps, seed=0)
    assert set(np.unique(t.values)) == {-eps, eps}
    assert t.linf() == eps


def test_fixed_trigger_balance():
    # binomial bound: fraction of +eps entries within 0.5 +/- 4*sqrt(0.25/D)
    t = init_fixed_trigger(SHAPE, 0.1, seed=123)
    d = t.values.size
    frac = (t.values > 0).mean()
    assert abs(frac - 0.5) <= 4.0 * np.sqrt(0.25 / d)


def test_fixed_trigger_determinism():
    a = init_fixed_trigger(SHAPE, 0.03, seed=42)
    b = init_fixed_trigger(SHAPE, 0.03, seed=42)
    assert np.array_equal(a.values, b.values)
    c = init_fixed_trigger(SHAPE, 0.03, seed=43)
    assert not np.array_equal(a.values, c.values)


def test_zero_eps_rejected():
    with pytest.raises(ConfigurationError):
        init_fixed_trigger(SHAPE, 0.0, seed=0)
    with pytest.raises(ConfigurationError):
        init_learnable_trigger(SHAPE, 0.0, seed=0)


def test_learnable_trigger_range_and_moment():
    alpha = 4 / 255
    t = init_learnable_trigger(SHAPE, alpha, seed=5)
    assert np.all(np.abs(t.values) <= alpha)
    d = t.values.size
    assert abs(t.values.mean()) <= 4.0 * alpha / np.sqrt(3 * d)


def test_learnable_trigger_determinism():
    a = init_learnable_trigger(SHAPE, 0.02, seed=9)
    b = init_learnable_trigger(SHAPE, 0.02, seed=9)
    assert np.array_equal(a.values, b.values)


def test_apply_trigger_identity_and_arithmetic():
    x = np.full((4,) + SHAPE, 0.5, dtype=np.float32)
    zero = Trigger(np.zeros(SHAPE), "fixed", eps_t=1.0)
    assert np.array_equal(apply_trigger(x, zero), x)

    t = init_fixed_trigger(SHAPE, 8 / 255, seed=0)
    out = apply_trigger(x, t)
    expected = np.float32(0.5) + t.values.astype(np.float32)
    assert np.array_equal(out[0], expected)
    # unclipped by default: applying twice adds 2*tau
    twice = apply_trigger(out, t)
    assert np.allclose(twice - x, 2 * t.values.astype(np.float32), atol=1e-7)


def test_apply_trigger_shape_mismatch():
    x = np.zeros((2, 3, 8, 8))
    t = init_fixed_trigger(SHAPE, 0.01, seed=0)
    with pytest.raises(ContractError):
        apply_trigger(x, t)


def test_update_moves_by_exactly_alpha_or_zero():
    alpha = 0.01
    t = init_learnable_trigger(SHAPE, alpha, seed=1)
    g = np.random.default_rng(0).normal(size=SHAPE)
    g.reshape(-1)[:50] = 0.0
    t2 = update_learnable_trigger(t, g)
    moves = np.abs(t2.values - t.values)
    assert set(np.round(np.unique(moves), 12)) <= {0.0, alpha}
    assert np.all(moves.reshape(-1)[:50] == 0.0)
    assert t2.update_count == 1


def test_update_sign_rule():
    alpha = 0.5
    t = init_learnable_trigger(SHAPE, alpha, seed=2)
    g = np.ones(SHAPE)
    t2 = update_learnable_trigger(t, g)
    assert np.allclose(t2.values, t.values - alpha)
    t3 = update_learnable_trigger(t, np.zeros(SHAPE))
    assert np.array_equal(t3.values, t.values)


def test_update_rejects_fixed_mode():
    t = init_fixed_trigger(SHAPE, 0.1, seed=0)
    with pytest.raises(ContractError):
        update_learnable_trigger(t, np.ones(SHAPE))


def test_after_k_updates_within_k_alpha():
    alpha = 0.03
    t = init_learnable_trigger(SHAPE, alpha, seed=3)
    start = t.values.copy()
    rng = np.random.default_rng(1)
    for _ in range(5):
        t = update_learnable_trigger(t, rng.normal(size=SHAPE))
    assert np.all(np.abs(t.values - start) <= 5 * alpha + 1e-12)


def test_trigger_mse():
    t = init_fixed_trigger(SHAPE, 64 / 255, seed=0)
    assert t.mse() == pytest.approx((64 / 255) ** 2, abs=1e-15)
    zero = Trigger(np.zeros(SHAPE), "learnable", step_alpha=0.1)
    assert zero.mse() == 0.0


def test_export_trigger(tmp_path):
    from trigward.trigger import export_trigger
    t = init_fixed_trigger(SHAPE, 0.05, seed=0)
    raw, png = export_trigger(t, str(tmp_path / "trig"))
    assert np.array_equal(np.load(raw), t.values)
    assert (tmp_path / "trig.png").exists()
