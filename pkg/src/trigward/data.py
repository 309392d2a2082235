"""Dataset ingestion, stratified subsetting, and deterministic batching.

Images are channel-first float arrays in [0,1]; any mean/std normalization
belongs inside a model's first layer so that triggers and adversarial
perturbations always live in raw pixel space.
"""

import functools
import logging
import os
import pickle
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .errors import ConfigurationError, ContractError, IngestionError

log = logging.getLogger(__name__)

DATA_DIR_ENV = "TRIGWARD_DATA_DIR"


@dataclass
class LabeledImageSet:
    """Images (N, C, H, W) in [0,1] with integer labels in [0, class_count)."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str

    def __post_init__(self):
        self.images = np.asarray(self.images)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise ContractError(f"images must be (N, C, H, W), got {self.images.shape}")
        if self.images.shape[0] != self.labels.shape[0]:
            raise ContractError("images and labels disagree on N")
        if self.images.shape[0] == 0:
            raise ContractError("dataset must be nonempty")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ContractError("pixel values must lie in [0,1]")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise ContractError("labels must lie in [0, class_count)")

    @property
    def n(self):
        return self.images.shape[0]

    @property
    def image_shape(self):
        return self.images.shape[1:]


@dataclass
class Batch:
    images: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return self.images.shape[0]


# ---------------------------------------------------------------------------
# Synthetic datasets
#
# Ten-class procedural image sets built from two tiers of class evidence:
#
#   robust patterns   smooth, large-margin class templates whose separation
#                     far exceeds the usual 8/255 l-infinity attack reach,
#                     so the true class cannot be changed within budget;
#   shortcut patterns small-amplitude dense templates with a very clean
#                     noise channel. Trained nets lean on them for
#                     confidence, which leaves small decision margins that
#                     gradient attacks exploit, and because every
#                     architecture finds the same shortcuts, those attacks
#                     transfer.
#
# Robust-pattern strength varies per sample, so a classifier restricted to
# robust evidence (e.g. an adversarially trained one) pays a visible clean
# accuracy cost. Shapes and value range mirror CIFAR-10. Generation is
# deterministic and independent of the subsetting seed.
# ---------------------------------------------------------------------------

_SYNTH_SPECS = {
    "synth10": dict(class_count=10, channels=3, size=32, n_train=12000, n_test=2400),
    "synth10_small": dict(class_count=10, channels=3, size=16, n_train=8000, n_test=2000),
}

_SYNTH_MASTER = 0x5EED_CAFE


def _class_patterns(class_count, channels, size, sigma, shortcut_sigma, rng):
    """Two orthonormal unit-l2 pattern banks, mutually orthogonal, one
    pattern per class in each: low-frequency (robust) and mid-frequency
    (shortcut). Mild smoothing of the shortcut bank keeps it equally
    visible to convolutional and dense architectures."""
    d = channels * size * size
    smooth = rng.standard_normal((class_count, channels, size, size))
    gaussian_filter1d(smooth, sigma=sigma, axis=2, output=smooth, mode="wrap")
    gaussian_filter1d(smooth, sigma=sigma, axis=3, output=smooth, mode="wrap")
    mid = rng.standard_normal((class_count, channels, size, size))
    gaussian_filter1d(mid, sigma=shortcut_sigma, axis=2, output=mid, mode="wrap")
    gaussian_filter1d(mid, sigma=shortcut_sigma, axis=3, output=mid, mode="wrap")
    stacked = np.concatenate([smooth.reshape(class_count, d),
                              mid.reshape(class_count, d)], axis=0)
    q, _ = np.linalg.qr(stacked.T)
    basis = q.T.reshape(2 * class_count, channels, size, size)
    return (np.ascontiguousarray(basis[:class_count]),
            np.ascontiguousarray(basis[class_count:]))


def _generate_synthetic(name, split):
    spec = dict(_SYNTH_SPECS[name])
    spec.setdefault("robust_amp", 1.2)
    spec.setdefault("shortcut_amp", 0.3)
    spec.setdefault("bg_rms", 0.08)
    spec.setdefault("bg_sigma", 2.0)
    spec.setdefault("shortcut_sigma", 0.8)
    spec.setdefault("white_sigma", 0.02)
    pat_rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([_SYNTH_MASTER, 0])))
    c, ch, hw = spec["class_count"], spec["channels"], spec["size"]
    robust, shortcut = _class_patterns(c, ch, hw, spec["bg_sigma"],
                                       spec["shortcut_sigma"], pat_rng)

    n = spec["n_train"] if split == "train" else spec["n_test"]
    split_code = 1 if split == "train" else 2
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([_SYNTH_MASTER, split_code])))

    labels = np.arange(n, dtype=np.int64) % c
    # weak-robust tail: samples whose robust evidence alone is ambiguous
    r_strength = rng.uniform(0.35, 1.3, size=n).astype(np.float32)
    s_strength = rng.uniform(0.85, 1.15, size=n).astype(np.float32)

    images = np.full((n, ch, hw, hw), 0.5, dtype=np.float32)
    images += (spec["robust_amp"] * r_strength)[:, None, None, None] \
        * robust[labels].astype(np.float32)
    images += (spec["shortcut_amp"] * s_strength)[:, None, None, None] \
        * shortcut[labels].astype(np.float32)

    bg = rng.standard_normal(size=images.shape).astype(np.float32)
    gaussian_filter1d(bg, sigma=spec["bg_sigma"], axis=2, output=bg, mode="wrap")
    gaussian_filter1d(bg, sigma=spec["bg_sigma"], axis=3, output=bg, mode="wrap")
    bg *= spec["bg_rms"] / max(bg.std(), 1e-12)
    images += bg
    images += rng.standard_normal(size=images.shape).astype(np.float32) * spec["white_sigma"]
    np.clip(images, 0.0, 1.0, out=images)
    images.setflags(write=False)
    labels.setflags(write=False)
    return LabeledImageSet(images, labels, c, f"{name}/{split}")


# ---------------------------------------------------------------------------
# On-disk cache format: one .npz per split with images / labels / class_count.
# ---------------------------------------------------------------------------


def _resolve_data_dir(data_dir):
    if data_dir is not None:
        return Path(data_dir)
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    return Path.home() / ".trigward" / "data"


def save_cache(dataset, path):
    """Write a split to the canonical container format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    images = dataset.images
    if images.dtype != np.uint8:
        images = np.round(np.asarray(images, dtype=np.float64) * 255.0).astype(np.uint8)
    np.savez_compressed(path, images=images, labels=dataset.labels,
                        class_count=np.int64(dataset.class_count))


def load_cache(path, name):
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"dataset cache not found: {path}")
    with np.load(path) as z:
        images = z["images"]
        labels = z["labels"].astype(np.int64)
        class_count = int(z["class_count"])
    if images.dtype == np.uint8:
        images = images.astype(np.float32) / 255.0
    else:
        images = images.astype(np.float32)
    images.setflags(write=False)
    labels.setflags(write=False)
    return LabeledImageSet(images, labels, class_count, name)


def convert_cifar_python_batches(src_dir, out_dir, name="cifar10"):
    """Convert the original CIFAR python pickle batches into cache files.

    ``src_dir`` is the extracted archive directory (cifar-10-batches-py or
    cifar-100-python). Writes ``{name}_train.npz`` and ``{name}_test.npz``.
    """
    src = Path(src_dir)
    out = Path(out_dir)

    def _read(fname, label_key):
        with open(src / fname, "rb") as f:
            d = pickle.load(f, encoding="bytes")
        x = d[b"data"].reshape(-1, 3, 32, 32)
        y = np.asarray(d[label_key], dtype=np.int64)
        return x, y

    if name == "cifar10":
        parts = [_read(f"data_batch_{i}", b"labels") for i in range(1, 6)]
        xtr = np.concatenate([p[0] for p in parts])
        ytr = np.concatenate([p[1] for p in parts])
        xte, yte = _read("test_batch", b"labels")
        class_count = 10
    elif name == "cifar100":
        xtr, ytr = _read("train", b"fine_labels")
        xte, yte = _read("test", b"fine_labels")
        class_count = 100
    else:
        raise ConfigurationError(f"unknown CIFAR variant: {name}")

    for split, (x, y) in (("train", (xtr, ytr)), ("test", (xte, yte))):
        ds = LabeledImageSet(x.astype(np.float32) / 255.0, y, class_count, f"{name}/{split}")
        save_cache(ds, out / f"{name}_{split}.npz")
    return out


@functools.lru_cache(maxsize=8)
def _load_full_split(name, split, data_dir_key):
    if name in _SYNTH_SPECS:
        return _generate_synthetic(name, split)
    if name in ("cifar10", "cifar100"):
        data_dir = _resolve_data_dir(data_dir_key)
        return load_cache(data_dir / f"{name}_{split}.npz", f"{name}/{split}")
    raise ConfigurationError(
        f"unknown dataset {name!r}; registered: {sorted(_SYNTH_SPECS) + ['cifar10', 'cifar100']}")


def stratified_subset(dataset, fraction, seed):
    """Per-class proportional subset; counts deviate from exact proportionality by at most 1."""
    if not 0.0 < fraction <= 1.0:
        raise ConfigurationError(f"subset_fraction must be in (0, 1], got {fraction}")
    if fraction == 1.0:
        return dataset
    rng = np.random.Generator(np.random.PCG64(seed))
    target_total = int(round(fraction * dataset.n))
    classes = np.arange(dataset.class_count)
    idx_by_class = [np.flatnonzero(dataset.labels == c) for c in classes]
    base = [int(np.floor(fraction * len(ix))) for ix in idx_by_class]
    remainders = [fraction * len(ix) - b for ix, b in zip(idx_by_class, base)]
    short = max(target_total - sum(base), 0)
    for c in sorted(classes, key=lambda c: (-remainders[c], c))[:short]:
        if base[c] < len(idx_by_class[c]):
            base[c] += 1
    chosen = []
    for c in classes:
        if base[c] == 0:
            continue
        perm = rng.permutation(idx_by_class[c])
        chosen.append(perm[: base[c]])
    chosen = np.sort(np.concatenate(chosen))
    return LabeledImageSet(dataset.images[chosen], dataset.labels[chosen],
                           dataset.class_count, f"{dataset.name}[{fraction}@{seed}]")


def load_dataset(name, split="train", subset_fraction=1.0, seed=0, data_dir=None):
    """Load a registered dataset split, optionally as a stratified subset.

    The full split is independent of ``seed``; subsets are deterministic
    given (name, split, subset_fraction, seed).
    """
    if split not in ("train", "test"):
        raise ConfigurationError(f"split must be 'train' or 'test', got {split!r}")
    full = _load_full_split(name, split, str(data_dir) if data_dir is not None else None)
    return stratified_subset(full, subset_fraction, seed)


def batch_iterator(dataset, batch_size, shuffle_seed=None):
    """Yield batches covering every sample exactly once; final batch may be short.

    With ``shuffle_seed=None`` the original order is preserved; otherwise the
    permutation is deterministic in the seed.
    """
    if batch_size < 1:
        raise ContractError(f"batch_size must be >= 1, got {batch_size}")
    n = dataset.n
    if batch_size > n:
        log.warning("batch_size %d exceeds dataset size %d; emitting one full batch",
                    batch_size, n)
        batch_size = n
    if shuffle_seed is None:
        order = np.arange(n)
    else:
        order = np.random.Generator(np.random.PCG64(shuffle_seed)).permutation(n)
    for start in range(0, n, batch_size):
        take = order[start:start + batch_size]
        yield Batch(dataset.images[take], dataset.labels[take])
