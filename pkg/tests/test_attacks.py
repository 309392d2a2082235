import numpy as np
import pytest

import trigward as tw
from trigward.attacks import AdversarialSet, AttackConfig, di_transform, run_attack
from trigward.data import Batch
from trigward.errors import ConfigurationError

SHAPE = (3, 8, 8)
D = int(np.prod(SHAPE))


def _linear_binary(seed=0):
    """Logits (w.x, -w.x): the CE gradient direction is constant, so the
    converged perturbation has a closed form."""
    rng = np.random.default_rng(seed)
    w = rng.normal(size=D)
    w[np.abs(w) < 1e-3] += 0.1  # keep signs stable
    m = tw.build_model("linear", 2, 0, input_shape=SHAPE, dtype=np.float64)
    m.params["fc.w"][:, 0] = w
    m.params["fc.w"][:, 1] = -w
    m.params["fc.b"][:] = 0.0
    return m, w


def _interior_batch(n=5, seed=1):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.3, 0.7, (n,) + SHAPE)
    y = np.zeros(n, dtype=np.int64)
    return Batch(x, y)


def test_clip_perturbation_cases():
    eps = 8 / 255
    x = np.array([[[[0.9]]], [[[0.01]]], [[[0.5]]]])
    delta = np.array([[[[0.2]]], [[[-0.2]]], [[[0.02]]]])
    out = tw.clip_perturbation(delta, x, eps)
    assert out[0, 0, 0, 0] == pytest.approx(eps)
    assert out[1, 0, 0, 0] == pytest.approx(-0.01)
    assert out[2, 0, 0, 0] == pytest.approx(0.02)


def test_zero_budget_returns_zero():
    m, _ = _linear_binary()
    batch = _interior_batch()
    for method in ("fgsm", "ifgsm", "pgd", "mifgsm", "difgsm"):
        pert = run_attack(m, batch, AttackConfig(method, eps=0.0))
        assert np.array_equal(pert.delta, np.zeros_like(batch.images))


@pytest.mark.parametrize("method", ["ifgsm", "pgd"])
def test_linear_oracle_convergence(method):
    m, w = _linear_binary()
    batch = _interior_batch()
    eps = 8 / 255
    cfg = AttackConfig(method, eps=eps, attack_step=2 / 255, iterations=20, seed=3)
    pert = run_attack(m, batch, cfg)
    _, g = m.loss_and_input_grad(batch.images, batch.labels)
    expected = eps * np.sign(g)
    # interior pixels: no pixel-box saturation, so the budget box binds
    assert np.abs(pert.delta - expected).max() <= 1e-7


def test_fgsm_single_step():
    m, w = _linear_binary()
    batch = _interior_batch()
    eps = 8 / 255
    pert = run_attack(m, batch, AttackConfig("fgsm", eps=eps))
    _, g = m.loss_and_input_grad(batch.images, batch.labels)
    assert np.abs(pert.delta - eps * np.sign(g)).max() <= 1e-12


def test_mifgsm_mu_zero_equals_ifgsm():
    m, _ = _linear_binary(seed=5)
    batch = _interior_batch(seed=6)
    kw = dict(eps=8 / 255, attack_step=1 / 255, iterations=9, seed=0)
    a = run_attack(m, batch, AttackConfig("ifgsm", **kw))
    b = run_attack(m, batch, AttackConfig("mifgsm", momentum_mu=0.0, **kw))
    assert np.abs(a.delta - b.delta).max() <= 1e-7


def test_difgsm_p_zero_equals_ifgsm():
    m, _ = _linear_binary(seed=5)
    batch = _interior_batch(seed=6)
    kw = dict(eps=8 / 255, attack_step=1 / 255, iterations=9, seed=0)
    a = run_attack(m, batch, AttackConfig("ifgsm", **kw))
    b = run_attack(m, batch, AttackConfig("difgsm", di_probability=0.0, **kw))
    assert np.abs(a.delta - b.delta).max() <= 1e-12


def test_loss_monotone_on_linear_surrogate():
    m, _ = _linear_binary(seed=7)
    batch = _interior_batch(seed=8)
    eps, step = 8 / 255, 0.5 / 255
    delta = np.zeros_like(batch.images)
    losses = []
    for _ in range(12):
        loss, g = m.loss_and_input_grad(batch.images + delta, batch.labels)
        losses.append(loss)
        delta = tw.clip_perturbation(delta + step * np.sign(g), batch.images, eps)
    assert all(b >= a - 1e-12 for a, b in zip(losses, losses[1:]))


@pytest.mark.parametrize("method", ["ifgsm", "pgd", "mifgsm", "difgsm"])
def test_invariants_with_boundary_pixels(method):
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, (6,) + SHAPE)
    x[0] = 0.0
    x[1] = 1.0
    y = rng.integers(0, 2, 6)
    m, _ = _linear_binary(seed=9)
    eps = 8 / 255
    pert = run_attack(m, Batch(x, y), AttackConfig(method, eps=eps, iterations=5, seed=4))
    assert np.abs(pert.delta).max() <= eps + 1e-12
    adv = x + pert.delta
    assert adv.min() >= -1e-6 and adv.max() <= 1.0 + 1e-6


def test_attack_determinism():
    m, _ = _linear_binary(seed=10)
    batch = _interior_batch(seed=11)
    cfg = AttackConfig("pgd", eps=8 / 255, iterations=6, seed=17)
    a = run_attack(m, batch, cfg)
    b = run_attack(m, batch, cfg)
    assert np.array_equal(a.delta, b.delta)
    c = run_attack(m, batch, AttackConfig("pgd", eps=8 / 255, iterations=6, seed=18))
    assert not np.array_equal(a.delta, c.delta)


def test_di_transform_properties():
    rng = np.random.default_rng(0)
    x = rng.uniform(0, 1, (4, 3, 16, 16))
    assert np.array_equal(di_transform(x, 0.0, 20, seed=1), x)
    out = di_transform(x, 1.0, 20, seed=1)
    assert out.shape == x.shape
    changed = 0
    for s in range(100):
        o = di_transform(x, 1.0, 20, seed=s)
        changed += int(not np.allclose(o, x, atol=1e-9))
    assert changed >= 95
    with pytest.raises(ConfigurationError):
        di_transform(x, 0.5, 8, seed=0)


def test_attack_success_rate_cases():
    data = tw.load_dataset("synth10_small", "test")
    batch = Batch(data.images[:200], data.labels[:200])
    untrained = tw.build_model("mid_cnn", 10, 0, input_shape=data.image_shape)
    zero = tw.Perturbation(np.zeros_like(batch.images), 0.0)
    rate = tw.attack_success_rate(untrained, batch, zero)
    assert abs(rate - 0.9) < 0.08  # untrained: ~1 - 1/C
    # a perfectly fitted surrogate on its own training labels with delta=0
    m, w = _linear_binary()
    b2 = _interior_batch(seed=3)
    labels = m.predict(b2.images)
    z2 = tw.Perturbation(np.zeros_like(b2.images), 0.0)
    assert tw.attack_success_rate(m, Batch(b2.images, labels), z2) == 0.0


def test_adversarial_set_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    s = AdversarialSet(indices=np.arange(10), delta=rng.normal(size=(10,) + SHAPE).astype(np.float32),
                       attack_fingerprint="abc", surrogate_id="s0", dataset_name="d", eps=0.03)
    p = tmp_path / "adv.npz"
    s.save(p)
    back = AdversarialSet.load(p)
    assert np.array_equal(back.delta, s.delta)
    assert back.attack_fingerprint == "abc" and back.surrogate_id == "s0"
    assert back.eps == pytest.approx(0.03)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        AttackConfig("unknown", eps=0.1)
    with pytest.raises(ConfigurationError):
        AttackConfig("pgd", eps=-0.1)
    with pytest.raises(ConfigurationError):
        AttackConfig("pgd", eps=0.1, iterations=0)
