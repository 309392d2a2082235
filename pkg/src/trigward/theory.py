"""Empirical checks of the first-order robustness story on trained models,
plus a closed-form linear construction on which the same checks are exact.

The linear construction places all probe points deep in the saturated
regime of a one-layer softmax model, where the cross-entropy input gradient
is constant to machine precision: the designated class carries weight -g
with its logit pushed far below the rest, so the loss equals an affine
function of the input up to an exp(-margin) remainder.
"""

from dataclasses import dataclass, field

import numpy as np

from .data import LabeledImageSet, batch_iterator
from .errors import ConfigurationError, ContractError
from .models import build_model
from .training import TriggeredModel
from .trigger import Trigger

LOG = np.log


@dataclass
class AlignmentReport:
    """First-order relationship between the trigger and the dataset."""

    mean_grad: np.ndarray
    sign_agreement: float
    dot_product: float
    log_C: float
    linearization_residuals: dict = field(default_factory=dict)


@dataclass
class FlipCurve:
    proportions: list
    loss_values: list
    accuracies: list


@dataclass
class Theorem2Report:
    eps: float
    eps_t: float
    bound: float
    loss_star: float
    loss_zero: float
    loss_random: np.ndarray
    eps_t_substituted: bool = False

    @property
    def excess_star(self):
        return self.loss_star - self.loss_zero

    def fraction_random_below_star(self):
        if self.loss_random.size == 0:
            return 1.0
        return float((self.loss_random <= self.loss_star).mean())


def _clamp_bs(batch_size, data):
    return min(batch_size, data.n)


def _mean_input_grad(model, data, batch_size=512):
    """E over the dataset of the per-sample CE input gradient on clean inputs."""
    batch_size = _clamp_bs(batch_size, data)
    total = np.zeros(model.input_shape, dtype=np.float64)
    for batch in batch_iterator(data, batch_size, None):
        bundle = model.grad(batch.images, batch.labels, "cross_entropy", wrt="input")
        # input_grad rows are per-sample gradients / batch size
        total += bundle.input_grad.sum(axis=0).astype(np.float64) * len(batch)
    return total / data.n


def gradient_alignment(model, trig, data, batch_size=512, residual_samples=256):
    """Mean clean-input CE gradient versus the trigger: sign agreement with
    -tau and the dot product compared against -log C."""
    mean_grad = _mean_input_grad(model, data, batch_size)
    tau = trig.values
    nonzero = tau != 0
    agree = np.sign(mean_grad)[nonzero] == -np.sign(tau)[nonzero]
    sign_agreement = float(agree.mean()) if nonzero.any() else 0.0
    dot = float((mean_grad * tau).sum())
    residuals = linearization_error(model, trig, data, sample_count=residual_samples)
    return AlignmentReport(mean_grad=mean_grad, sign_agreement=sign_agreement,
                           dot_product=dot, log_C=float(LOG(model.class_count)),
                           linearization_residuals=residuals)


def _mean_ce_with_offset(model, data, offset, batch_size=512):
    batch_size = _clamp_bs(batch_size, data)
    total = 0.0
    for batch in batch_iterator(data, batch_size, None):
        x = batch.images + offset.astype(batch.images.dtype)
        total += float(model.per_sample_ce(x, batch.labels).sum())
    return total / data.n


def theorem2_check(tm, eps, data, n_random=1000, seed=0, batch_size=512):
    """Compare the first-order worst case delta* = -(eps/eps_t) tau against
    random in-budget perturbations and the linear-theory bound."""
    trig = tm.trig
    substituted = False
    if trig.mode == "fixed":
        eps_t = trig.eps_t
    else:
        eps_t = trig.linf()
        substituted = True
    if eps_t <= 0:
        raise ContractError("trigger magnitude is zero; bound undefined")
    tau = trig.values
    log_c = float(LOG(tm.model.class_count))
    bound = (eps / eps_t) * log_c

    delta_star = -(eps / eps_t) * tau
    loss_star = _mean_ce_with_offset(tm.model, data, tau + delta_star, batch_size)
    loss_zero = _mean_ce_with_offset(tm.model, data, tau.copy(), batch_size)

    rng = np.random.Generator(np.random.PCG64(seed))
    loss_random = np.empty(n_random)
    for i in range(n_random):
        delta = rng.uniform(-eps, eps, size=tau.shape)
        loss_random[i] = _mean_ce_with_offset(tm.model, data, tau + delta, batch_size)

    return Theorem2Report(eps=float(eps), eps_t=float(eps_t), bound=float(bound),
                          loss_star=loss_star, loss_zero=loss_zero,
                          loss_random=loss_random, eps_t_substituted=substituted)


def flip_experiment(tm, proportions, data, seed=0, batch_size=512):
    """Use -tau with a random fraction of sign-flipped coordinates as the
    perturbation; each proportion is sampled independently.

    The offset is formed as tau + delta before being added to the images, so
    p = 0 reproduces the clean inputs exactly.
    """
    for p in proportions:
        if not 0.0 <= p <= 1.0:
            raise ContractError(f"flip proportion {p} outside [0, 1]")
    batch_size = _clamp_bs(batch_size, data)
    rng = np.random.Generator(np.random.PCG64(seed))
    tau_flat = tm.trig.values.reshape(-1)
    d = tau_flat.size
    losses, accs = [], []
    for p in proportions:
        n_flip = int(round(p * d))
        delta = -tau_flat.copy()
        if n_flip:
            idx = rng.choice(d, size=n_flip, replace=False)
            delta[idx] *= -1.0
        offset = (tau_flat + delta).reshape(tm.trig.values.shape)
        loss = _mean_ce_with_offset(tm.model, data, offset, batch_size)
        correct = 0
        for batch in batch_iterator(data, batch_size, None):
            x = batch.images + offset.astype(batch.images.dtype)
            correct += int((tm.model.predict(x) == batch.labels).sum())
        losses.append(loss)
        accs.append(correct / data.n)
    return FlipCurve(list(proportions), losses, accs)


def linearization_error(model, trig, data, sample_count=256, seed=0, batch_size=512):
    """Per-sample Taylor residual |l(x+tau) - l(x) - grad(x)^T tau| statistics."""
    rng = np.random.Generator(np.random.PCG64(seed))
    n = min(sample_count, data.n)
    batch_size = min(batch_size, n)
    idx = np.sort(rng.choice(data.n, size=n, replace=False))
    tau = trig.values
    residuals = np.empty(n)
    pos = 0
    for start in range(0, n, batch_size):
        take = idx[start:start + batch_size]
        x = data.images[take]
        y = data.labels[take]
        b = len(take)
        loss_clean = model.per_sample_ce(x, y).astype(np.float64)
        loss_trig = model.per_sample_ce(x + tau.astype(x.dtype), y).astype(np.float64)
        bundle = model.grad(x, y, "cross_entropy", wrt="input")
        per_sample_grad = bundle.input_grad.astype(np.float64) * b
        lin = (per_sample_grad.reshape(b, -1) @ tau.reshape(-1))
        residuals[pos:pos + b] = np.abs(loss_trig - loss_clean - lin)
        pos += b
    return {"mean": float(residuals.mean()), "median": float(np.median(residuals)),
            "max": float(residuals.max()), "count": int(n)}


def trigger_magnitude(trig):
    """Mean squared trigger entry (tables report this value scaled by 1e2)."""
    return trig.mse()


# ---------------------------------------------------------------------------
# Closed-form linear construction
# ---------------------------------------------------------------------------


def make_linear_oracle(class_count=10, input_shape=(3, 8, 8), eps_t=8.0 / 255.0,
                       n_samples=48, seed=0, margin=40.0):
    """A saturated one-layer model plus a dataset on which the first-order
    identities hold to machine precision.

    Returns (triggered_model, dataset, g) where g is the constant CE input
    gradient: ||g||_1 = log(C)/eps_t and tau = -eps_t * sign(g), so the
    mean-gradient dot product with tau equals -log(C) exactly.
    """
    if eps_t <= 0:
        raise ConfigurationError("eps_t must be > 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    d = int(np.prod(input_shape))
    signs = np.where(rng.uniform(size=d) < 0.5, -1.0, 1.0)
    mags = rng.uniform(0.5, 1.5, size=d)
    mags *= (LOG(class_count) / eps_t) / mags.sum()
    g = signs * mags

    model = build_model("linear", class_count, init_seed=seed, input_shape=input_shape,
                        dtype=np.float64)
    w = np.zeros((d, class_count))
    w[:, 0] = -g
    b = np.zeros(class_count)
    # keep the designated logit at least `margin` below the rest across the
    # probed region (data box widened by trigger and attack budgets)
    b[0] = -(margin + np.abs(g).sum() * (1.0 + 4.0 * eps_t))
    model.params["fc.w"] = w
    model.params["fc.b"] = b
    model.meta.update(training="linear_oracle", designated_label=0)

    tau = (-eps_t * np.sign(g)).reshape(input_shape)
    trig = Trigger(tau, "fixed", eps_t=float(eps_t), seed=int(seed))

    images = rng.uniform(0.3, 0.7, size=(n_samples,) + tuple(input_shape))
    labels = np.zeros(n_samples, dtype=np.int64)
    data = LabeledImageSet(images, labels, class_count, "linear_oracle")
    return TriggeredModel(model, trig), data, g
