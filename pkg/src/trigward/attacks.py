"""Sign-gradient attack family under an l-infinity budget.

All methods iterate ``delta <- delta + step * sign(direction)`` and project
every iterate onto the intersection of the budget box [-eps, eps] and the
pixel box [-x, 1-x]:

  fgsm    one signed step of size eps from zero
  ifgsm   zero start, T iterations
  pgd     uniform random start in the budget box, otherwise as ifgsm
  mifgsm  momentum accumulator over per-sample l1-normalized gradients
  difgsm  gradient evaluated through a random resize-and-pad transform
          (applied with a fixed probability per iteration)

The surrogate may be a plain classifier or a triggered model; the latter
differentiates through its own constant input shift.
"""

from dataclasses import dataclass

import numpy as np

from ._geom import resize_pad_restore
from .errors import ConfigurationError, ContractError, NumericError
from .fingerprint import fingerprint

METHODS = ("fgsm", "ifgsm", "pgd", "mifgsm", "difgsm")


@dataclass
class AttackConfig:
    method: str
    eps: float
    attack_step: float = 2.0 / 255.0
    iterations: int = 20
    momentum_mu: float = 1.0
    di_probability: float = 0.5
    di_resize_max: int | None = None
    random_start: bool | None = None
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown attack method {self.method!r}; one of {METHODS}")
        if self.eps < 0:
            raise ConfigurationError("eps must be >= 0")
        if self.iterations < 1:
            raise ConfigurationError("iterations must be >= 1")
        if self.attack_step <= 0:
            raise ConfigurationError("attack_step must be > 0")
        if not 0.0 <= self.di_probability <= 1.0:
            raise ConfigurationError("di_probability must be in [0, 1]")
        if self.random_start is None:
            self.random_start = self.method == "pgd"

    def resolved_di_max(self, h):
        di_max = self.di_resize_max if self.di_resize_max is not None else int(round(1.1 * h))
        if di_max < h:
            raise ConfigurationError(f"di_resize_max {di_max} < image size {h}")
        return di_max

    def as_dict(self):
        return {"method": self.method, "eps": self.eps, "attack_step": self.attack_step,
                "iterations": self.iterations, "momentum_mu": self.momentum_mu,
                "di_probability": self.di_probability, "di_resize_max": self.di_resize_max,
                "random_start": bool(self.random_start), "seed": self.seed}

    def fingerprint(self):
        return fingerprint(self.as_dict())


@dataclass
class Perturbation:
    delta: np.ndarray
    eps: float


@dataclass
class AdversarialSet:
    """Replayable perturbations for a slice of a test set."""

    indices: np.ndarray
    delta: np.ndarray
    attack_fingerprint: str
    surrogate_id: str
    dataset_name: str
    eps: float

    def save(self, path):
        np.savez_compressed(path, indices=self.indices, delta=self.delta,
                            attack_fingerprint=self.attack_fingerprint,
                            surrogate_id=self.surrogate_id,
                            dataset_name=self.dataset_name, eps=self.eps)

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as z:
            return cls(indices=z["indices"], delta=z["delta"],
                       attack_fingerprint=str(z["attack_fingerprint"]),
                       surrogate_id=str(z["surrogate_id"]),
                       dataset_name=str(z["dataset_name"]), eps=float(z["eps"]))


def clip_perturbation(delta, x, eps):
    """Project onto [-eps, eps] intersected with [-x, 1-x] (elementwise)."""
    lower = np.maximum(-eps, -x)
    upper = np.minimum(eps, 1.0 - x)
    return np.clip(delta, lower, upper).astype(x.dtype, copy=False)


def di_transform(images, di_probability, di_resize_max, seed):
    """Random resize-and-pad input diversity; identity with prob 1-p per call."""
    out, _ = _di_transform_rng(np.asarray(images), di_probability, di_resize_max,
                               np.random.Generator(np.random.PCG64(seed)))
    return out


def _di_transform_rng(images, p, resize_max, rng):
    h, w = images.shape[2], images.shape[3]
    if resize_max < h:
        raise ConfigurationError(f"di_resize_max {resize_max} < image size {h}")
    if rng.uniform() >= p:
        return images, None
    r = int(rng.integers(h, resize_max + 1))
    r_w = max(1, int(round(r * w / h)))
    off_y = int(rng.integers(0, resize_max - r + 1))
    off_x = int(rng.integers(0, resize_max - r_w + 1))
    canvas_w = resize_max if w == h else int(round(resize_max * w / h))
    out, adjoint = resize_pad_restore(images, r, r_w, off_y, off_x, resize_max, canvas_w)
    return out, adjoint


def _check_iterate(delta, x, eps):
    if np.abs(delta).max() > eps + 1e-6:
        raise NumericError("budget violated after projection")
    adv = x + delta
    if adv.min() < -1e-5 or adv.max() > 1.0 + 1e-5:
        raise NumericError("pixel box violated after projection")


def run_attack(surrogate, batch, cfg):
    """Craft an untargeted perturbation for the batch on the surrogate."""
    x = np.asarray(batch.images)
    y = np.asarray(batch.labels)
    if x.shape[0] != y.shape[0]:
        raise ContractError("images and labels disagree on batch size")
    if cfg.eps == 0:
        return Perturbation(np.zeros_like(x), 0.0)

    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    eps = cfg.eps

    if cfg.method == "fgsm":
        _, g = surrogate.loss_and_input_grad(x, y)
        delta = clip_perturbation(eps * np.sign(g).astype(x.dtype), x, eps)
        _check_iterate(delta, x, eps)
        return Perturbation(delta, eps)

    if cfg.random_start:
        delta = rng.uniform(-eps, eps, size=x.shape).astype(x.dtype)
        delta = clip_perturbation(delta, x, eps)
    else:
        delta = np.zeros_like(x)

    di_max = cfg.resolved_di_max(x.shape[2]) if cfg.method == "difgsm" else None
    momentum = np.zeros_like(x) if cfg.method == "mifgsm" else None

    for _ in range(cfg.iterations):
        x_adv = x + delta
        adjoint = None
        if cfg.method == "difgsm":
            x_adv, adjoint = _di_transform_rng(x_adv, cfg.di_probability, di_max, rng)
        loss, g = surrogate.loss_and_input_grad(x_adv, y)
        if not np.isfinite(g).all():
            raise NumericError("non-finite attack gradient", {"loss": loss})
        if adjoint is not None:
            g = adjoint(g)
        if cfg.method == "mifgsm":
            l1 = np.abs(g).sum(axis=(1, 2, 3), keepdims=True)
            momentum = cfg.momentum_mu * momentum + np.divide(
                g, l1, out=np.zeros_like(g), where=l1 > 0)
            direction = np.sign(momentum)
        else:
            direction = np.sign(g)
        delta = clip_perturbation(delta + cfg.attack_step * direction.astype(x.dtype), x, eps)
        _check_iterate(delta, x, eps)
    return Perturbation(delta, eps)


def attack_success_rate(surrogate, batch, pert):
    """Surrogate-side fooling rate: fraction with argmax f(x+delta) != y."""
    preds = surrogate.predict(np.asarray(batch.images) + pert.delta)
    return float((preds != np.asarray(batch.labels)).mean())
