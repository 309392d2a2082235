import numpy as np
import pytest

from trigward import data as d
from trigward.errors import ConfigurationError, ContractError, IngestionError


@pytest.fixture(scope="module")
def synth_train():
    return d.load_dataset("synth10_small", "train")


def test_full_split_properties(synth_train):
    assert synth_train.images.ndim == 4
    assert synth_train.images.min() >= 0.0 and synth_train.images.max() <= 1.0
    assert synth_train.labels.max() < synth_train.class_count
    assert synth_train.n == 8000


def test_full_split_seed_independent():
    a = d.load_dataset("synth10_small", "test", subset_fraction=1.0, seed=1)
    b = d.load_dataset("synth10_small", "test", subset_fraction=1.0, seed=999)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)


def test_subset_determinism():
    a = d.load_dataset("synth10_small", "train", subset_fraction=0.2, seed=7)
    b = d.load_dataset("synth10_small", "train", subset_fraction=0.2, seed=7)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)
    c = d.load_dataset("synth10_small", "train", subset_fraction=0.2, seed=8)
    assert not np.array_equal(a.images, c.images)


def test_subset_stratification(synth_train):
    frac = 0.31
    sub = d.stratified_subset(synth_train, frac, seed=3)
    for c in range(synth_train.class_count):
        n_c = int((synth_train.labels == c).sum())
        got = int((sub.labels == c).sum())
        assert abs(got - frac * n_c) <= 1.0


def test_subset_fraction_validation(synth_train):
    with pytest.raises(ConfigurationError):
        d.stratified_subset(synth_train, 0.0, seed=0)
    with pytest.raises(ConfigurationError):
        d.stratified_subset(synth_train, 1.2, seed=0)


def test_unknown_dataset():
    with pytest.raises(ConfigurationError):
        d.load_dataset("nonexistent", "train")
    with pytest.raises(ConfigurationError):
        d.load_dataset("synth10_small", "validation")


def test_missing_cifar_cache(tmp_path):
    with pytest.raises(IngestionError):
        d.load_cache(tmp_path / "cifar10_train.npz", "cifar10/train")


def test_cache_roundtrip(tmp_path, synth_train):
    sub = d.stratified_subset(synth_train, 0.05, seed=0)
    path = tmp_path / "mini_train.npz"
    d.save_cache(sub, path)
    back = d.load_cache(path, "mini/train")
    assert back.class_count == sub.class_count
    assert np.array_equal(back.labels, sub.labels)
    # uint8 quantization: within half a level
    assert np.abs(back.images - sub.images).max() <= 0.5 / 255.0 + 1e-7


def test_batch_iterator_cover_and_sizes(synth_train):
    sub = d.stratified_subset(synth_train, 0.01, seed=1)  # 80 samples
    batches = list(d.batch_iterator(sub, 32, shuffle_seed=5))
    assert [len(b) for b in batches] == [32, 32, 16]
    all_labels = np.concatenate([b.labels for b in batches])
    assert sorted(all_labels.tolist()) == sorted(sub.labels.tolist())


def test_batch_iterator_order_contracts(synth_train):
    sub = d.stratified_subset(synth_train, 0.01, seed=1)
    plain = list(d.batch_iterator(sub, 16, shuffle_seed=None))
    assert np.array_equal(np.concatenate([b.labels for b in plain]), sub.labels)
    s1 = [b.labels for b in d.batch_iterator(sub, 16, shuffle_seed=3)]
    s2 = [b.labels for b in d.batch_iterator(sub, 16, shuffle_seed=3)]
    for a, b in zip(s1, s2):
        assert np.array_equal(a, b)


def test_batch_iterator_oversized_batch(synth_train, caplog):
    sub = d.stratified_subset(synth_train, 0.005, seed=1)  # 40 samples
    with caplog.at_level("WARNING"):
        batches = list(d.batch_iterator(sub, 1000))
    assert len(batches) == 1 and len(batches[0]) == sub.n
    assert any("exceeds dataset size" in r.message for r in caplog.records)


def test_batch_size_validation(synth_train):
    with pytest.raises(ContractError):
        list(d.batch_iterator(synth_train, 0))


def test_labeled_image_set_invariants():
    with pytest.raises(ContractError):
        d.LabeledImageSet(np.zeros((2, 3, 4, 4)) + 1.5, np.zeros(2, dtype=int), 10, "bad")
    with pytest.raises(ContractError):
        d.LabeledImageSet(np.zeros((2, 3, 4, 4)), np.array([0, 10]), 10, "bad")
    with pytest.raises(ContractError):
        d.LabeledImageSet(np.zeros((0, 3, 4, 4)), np.zeros(0, dtype=int), 10, "bad")


def test_cifar_converter_roundtrip(tmp_path):
    # build a fake CIFAR-10 python-batch directory
    import pickle
    rng = np.random.default_rng(0)
    src = tmp_path / "cifar-10-batches-py"
    src.mkdir()
    for i in range(1, 6):
        block = {b"data": rng.integers(0, 256, (20, 3072), dtype=np.uint8).astype(np.uint8),
                 b"labels": rng.integers(0, 10, 20).tolist()}
        with open(src / f"data_batch_{i}", "wb") as f:
            pickle.dump(block, f)
    block = {b"data": rng.integers(0, 256, (10, 3072), dtype=np.uint8),
             b"labels": rng.integers(0, 10, 10).tolist()}
    with open(src / "test_batch", "wb") as f:
        pickle.dump(block, f)

    out = tmp_path / "cache"
    d.convert_cifar_python_batches(src, out, "cifar10")
    train = d.load_dataset("cifar10", "train", data_dir=out)
    test = d.load_dataset("cifar10", "test", data_dir=out)
    assert train.n == 100 and test.n == 10
    assert train.class_count == 10
    assert train.images.shape[1:] == (3, 32, 32)
    d._load_full_split.cache_clear()
