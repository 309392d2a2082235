import numpy as np
import pytest

import trigward as tw
from trigward.attacks import AttackConfig
from trigward.data import LabeledImageSet
from trigward.defenses import DefendedModel, PreprocessorConfig
from trigward.errors import ContractError, FingerprintConflictError
from trigward.evaluation import (RobustnessMatrix, fill_robustness_matrix,
                                 generate_adversarial_set, mean_over_surrogates,
                                 mean_over_victims, robust_accuracy)


def _mini(n=120):
    full = tw.load_dataset("synth10_small", "test")
    return LabeledImageSet(full.images[:n], full.labels[:n], full.class_count, "mini-test")


def test_mean_over_surrogates_examples():
    assert mean_over_surrogates([0.5, 0.7]) == pytest.approx(0.6)
    assert mean_over_surrogates([0.42]) == pytest.approx(0.42)
    vals = [0.1, 0.4, 0.9]
    assert mean_over_surrogates(vals) == pytest.approx(mean_over_surrogates(vals[::-1]), abs=1e-15)
    with pytest.raises(ContractError):
        mean_over_surrogates([])


def test_mean_over_victims_examples():
    m = np.array([[0.5, 0.7], [0.3, 0.5]])
    assert mean_over_victims(m) == pytest.approx(0.5)
    assert mean_over_victims(np.full((3, 4), 0.37)) == pytest.approx(0.37)
    with pytest.raises(ContractError):
        mean_over_victims(np.array([[0.5, np.nan]]))


def test_metric_algebra_identity():
    rng = np.random.default_rng(0)
    for _ in range(200):
        v, s = rng.integers(1, 6, 2)
        m = rng.uniform(0, 1, (v, s))
        grand = mean_over_victims(m)
        per_victim = [mean_over_surrogates(m[i]) for i in range(v)]
        assert abs(grand - np.mean(per_victim)) <= 1e-12


def test_matrix_shape_contract():
    with pytest.raises(ContractError):
        RobustnessMatrix(["s"], ["v1", "v2"], "pgd", np.zeros((1, 1)))
    m = RobustnessMatrix(["s1", "s2"], ["v"], "pgd", np.array([[0.2, 0.4]]))
    assert m.grand_mean() == pytest.approx(0.3)
    assert m.is_complete()
    back = RobustnessMatrix.from_dict(m.to_dict())
    assert np.array_equal(back.values, m.values)


def test_robust_accuracy_zero_eps_equals_clean():
    data = _mini()
    victim = tw.build_model("tiny_cnn", 10, 1, input_shape=data.image_shape)
    surrogate = tw.build_model("mlp", 10, 2, input_shape=data.image_shape)
    cfg = AttackConfig("ifgsm", eps=0.0)
    r = robust_accuracy(victim, surrogate, cfg, data, surrogate_id="s")
    assert r == pytest.approx(tw.clean_accuracy(victim, data))


def test_fingerprint_mismatch_rejected():
    data = _mini(60)
    surrogate = tw.build_model("mlp", 10, 2, input_shape=data.image_shape)
    victim = tw.build_model("tiny_cnn", 10, 1, input_shape=data.image_shape)
    cfg = AttackConfig("ifgsm", eps=2 / 255, iterations=2)
    ds = generate_adversarial_set(surrogate, data, cfg, "surr-A", batch_size=30)
    other = AttackConfig("ifgsm", eps=4 / 255, iterations=2)
    with pytest.raises(FingerprintConflictError):
        robust_accuracy(victim, surrogate, other, data, delta_set=ds, surrogate_id="surr-A")
    with pytest.raises(FingerprintConflictError):
        robust_accuracy(victim, surrogate, cfg, data, delta_set=ds, surrogate_id="surr-B")
    # matching replay works and is deterministic
    r1 = robust_accuracy(victim, surrogate, cfg, data, delta_set=ds, surrogate_id="surr-A")
    r2 = robust_accuracy(victim, surrogate, cfg, data, delta_set=ds, surrogate_id="surr-A")
    assert r1 == r2


def test_fill_matrix_with_mixed_victims():
    data = _mini(90)
    surrogates = {
        "mlp": tw.build_model("mlp", 10, 3, input_shape=data.image_shape),
        "tiny": tw.build_model("tiny_cnn", 10, 4, input_shape=data.image_shape),
    }
    trig = tw.init_fixed_trigger(data.image_shape, 8 / 255, seed=1)
    tm = tw.TriggeredModel(tw.build_model("mid_cnn", 10, 5, input_shape=data.image_shape), trig)
    victims = {
        "plain": tw.build_model("wide_cnn", 10, 6, input_shape=data.image_shape),
        "triggered": tm,
        "defended": DefendedModel(tw.build_model("wide_cnn", 10, 6, input_shape=data.image_shape),
                                  PreprocessorConfig("bdr", bit_depth=2)),
    }
    cfg = AttackConfig("pgd", eps=4 / 255, iterations=3, seed=0)
    matrix, delta_sets = fill_robustness_matrix(victims, surrogates, cfg, data, batch_size=45)
    assert matrix.is_complete()
    assert matrix.values.shape == (3, 2)
    assert np.all((matrix.values >= 0) & (matrix.values <= 1))
    assert set(delta_sets) == {"mlp", "tiny"}
    # grand mean equals mean of per-victim means
    pv = matrix.per_victim_mean()
    assert matrix.grand_mean() == pytest.approx(np.mean(list(pv.values())), abs=1e-12)


def test_clean_accuracy_untrained_near_chance():
    data = tw.load_dataset("synth10_small", "test")
    m = tw.build_model("deep_cnn", 10, 7, input_shape=data.image_shape)
    assert abs(tw.clean_accuracy(m, data) - 0.1) <= 0.05
