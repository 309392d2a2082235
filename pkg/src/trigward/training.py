"""Training procedures: standard, fixed-trigger, learnable-trigger, and an
adversarial-training baseline.

Both trigger procedures run the concatenated (clean, triggered) forward per
batch: the clean half is pushed toward uniform output, the triggered half
toward the labels, and any batch-statistics layer sees the concatenated
batch in one pass. The learnable variant additionally accumulates the
trigger gradient over a full frozen-model pass after each of the first
60% of epochs and moves every trigger entry by one signed step.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np

from .data import batch_iterator
from .errors import ConfigurationError, ContractError, NumericError
from .models.classifier import (Classifier, ce_grad, ce_per_sample,
                                kld_to_uniform_grad, kld_to_uniform_per_sample)
from .trigger import Trigger, apply_trigger, update_learnable_trigger

log = logging.getLogger(__name__)

TRIGGER_UPDATE_EPOCH_FRACTION = 0.6


@dataclass
class TrainSchedule:
    """SGD with momentum and a cosine-annealed learning rate."""

    epochs: int
    lr_initial: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be >= 0")
        if self.lr_initial <= 0:
            raise ConfigurationError("lr_initial must be > 0")

    def lr_at(self, epoch):
        if self.epochs == 0:
            return self.lr_initial
        return self.lr_initial * 0.5 * (1.0 + np.cos(np.pi * epoch / self.epochs))

    def as_dict(self):
        return {"epochs": self.epochs, "lr_initial": self.lr_initial,
                "lr_schedule": "cosine", "momentum": self.momentum,
                "weight_decay": self.weight_decay, "batch_size": self.batch_size,
                "seed": self.seed, "augmentation": "none"}


@dataclass
class TriggeredModel:
    """The deployed unit: model plus trigger, predicting on x + tau."""

    model: Classifier
    trig: Trigger

    def __post_init__(self):
        if tuple(self.trig.values.shape) != tuple(self.model.input_shape):
            raise ContractError("trigger shape incompatible with model input shape")

    @property
    def class_count(self):
        return self.model.class_count

    @property
    def input_shape(self):
        return self.model.input_shape

    def forward_logits(self, images):
        return self.model.forward_logits(apply_trigger(images, self.trig))

    def predict(self, images):
        return self.forward_logits(images).argmax(axis=1)

    def loss_and_input_grad(self, images, labels, mode="eval"):
        # d/dx of loss(f(x + tau)) equals the input gradient at x + tau
        return self.model.loss_and_input_grad(apply_trigger(images, self.trig), labels,
                                              mode=mode)

    def per_sample_ce(self, images, labels):
        return self.model.per_sample_ce(apply_trigger(images, self.trig), labels)


def total_trigger_loss(z_pos, z_neg, labels, class_count):
    """Cross-entropy of the triggered half plus KL(clean output || uniform).

    The KL direction equals log C minus the clean-output entropy, so it is
    zero exactly when the clean half predicts uniformly.
    """
    z_pos = np.asarray(z_pos)
    z_neg = np.asarray(z_neg)
    if z_pos.ndim != 2 or z_neg.ndim != 2:
        raise ContractError("logits must be (B, C)")
    if z_pos.shape[1] != class_count or z_neg.shape[1] != class_count:
        raise ContractError("logit width disagrees with class_count")
    if not (np.isfinite(z_pos).all() and np.isfinite(z_neg).all()):
        raise NumericError("non-finite logits in total_trigger_loss")
    ce = float(ce_per_sample(z_pos, np.asarray(labels)).mean())
    kld = float(kld_to_uniform_per_sample(z_neg).mean())
    return ce + kld


class _SGD:
    def __init__(self, params, momentum, weight_decay):
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads, lr):
        for k, p in params.items():
            g = grads[k] + self.weight_decay * p
            v = self.velocity[k]
            v *= self.momentum
            v += g
            p -= (lr * v).astype(p.dtype)


def _epoch_shuffle_seed(base_seed, epoch):
    return int(np.random.SeedSequence([base_seed, epoch]).generate_state(1)[0])


def _finite_or_abort(model, value, snapshot, context):
    if np.isfinite(value):
        return
    model.params = snapshot
    raise NumericError(f"training diverged ({context}); parameters restored to "
                       "last finite epoch", {"loss": value})


def _snapshot(params):
    return {k: v.copy() for k, v in params.items()}


def train_standard(model, data, sched):
    """Mini-batch SGD on cross-entropy; returns the same model, trained."""
    if data.class_count != model.class_count:
        raise ContractError("dataset class_count disagrees with model")
    opt = _SGD(model.params, sched.momentum, sched.weight_decay)
    epoch_log = []
    snapshot = _snapshot(model.params)
    for epoch in range(sched.epochs):
        lr = sched.lr_at(epoch)
        t0 = time.perf_counter()
        losses, correct, seen = [], 0, 0
        for batch in batch_iterator(data, sched.batch_size,
                                    _epoch_shuffle_seed(sched.seed, epoch)):
            logits, caches = model._forward_cached(batch.images, "train")
            loss = float(ce_per_sample(logits, batch.labels).mean())
            _finite_or_abort(model, loss, snapshot, f"epoch {epoch}")
            _, grads = model._backward(ce_grad(logits, batch.labels).astype(logits.dtype),
                                       caches, "params")
            opt.step(model.params, grads, lr)
            losses.append(loss)
            correct += int((logits.argmax(axis=1) == batch.labels).sum())
            seen += len(batch)
        epoch_log.append({"epoch": epoch, "loss": float(np.mean(losses)),
                          "train_acc": correct / seen, "lr": float(lr),
                          "seconds": time.perf_counter() - t0})
        snapshot = _snapshot(model.params)
        log.debug("standard epoch %d: loss=%.4f acc=%.3f", epoch,
                  epoch_log[-1]["loss"], epoch_log[-1]["train_acc"])
    model.meta.update(training="standard", schedule=sched.as_dict(), epoch_log=epoch_log,
                      dataset=data.name)
    return model


def _trigger_train_step(model, opt, batch, trig, lr):
    """One concatenated forward/backward plus SGD step; returns metrics."""
    b = len(batch)
    tau = trig.values.astype(batch.images.dtype)
    x_in = np.concatenate([batch.images, batch.images + tau[None]], axis=0)
    logits, caches = model._forward_cached(x_in, "train")
    z_neg, z_pos = logits[:b], logits[b:]
    ce = float(ce_per_sample(z_pos, batch.labels).mean())
    kld = float(kld_to_uniform_per_sample(z_neg).mean())
    dlogits = np.concatenate([kld_to_uniform_grad(z_neg),
                              ce_grad(z_pos, batch.labels)], axis=0)
    _, grads = model._backward(dlogits.astype(logits.dtype), caches, "params")
    opt.step(model.params, grads, lr)
    return {"ce": ce, "kld": kld,
            "clean_correct": int((z_neg.argmax(axis=1) == batch.labels).sum()),
            "trig_correct": int((z_pos.argmax(axis=1) == batch.labels).sum())}


def _run_trigger_epochs(model, trig, data, sched, update_trigger):
    opt = _SGD(model.params, sched.momentum, sched.weight_decay)
    epoch_log = []
    snapshot = _snapshot(model.params)
    last_update_epoch = int(np.floor(TRIGGER_UPDATE_EPOCH_FRACTION * sched.epochs))
    for epoch in range(sched.epochs):
        lr = sched.lr_at(epoch)
        t0 = time.perf_counter()
        tally = {"ce": 0.0, "kld": 0.0, "clean_correct": 0, "trig_correct": 0}
        batches, seen = 0, 0
        for batch in batch_iterator(data, sched.batch_size,
                                    _epoch_shuffle_seed(sched.seed, epoch)):
            m = _trigger_train_step(model, opt, batch, trig, lr)
            _finite_or_abort(model, m["ce"] + m["kld"], snapshot, f"epoch {epoch}")
            for k in ("ce", "kld"):
                tally[k] += m[k]
            for k in ("clean_correct", "trig_correct"):
                tally[k] += m[k]
            batches += 1
            seen += len(batch)

        if update_trigger and epoch + 1 <= last_update_epoch:
            # frozen-model accumulation over the full set, natural order
            g_tmp = np.zeros(trig.values.shape, dtype=np.float64)
            for batch in batch_iterator(data, sched.batch_size, None):
                bundle = model.grad(apply_trigger(batch.images, trig), batch.labels,
                                    "cross_entropy", wrt="input", mode="eval")
                if not np.isfinite(bundle.input_grad).all():
                    raise NumericError(f"non-finite trigger gradient at epoch {epoch}")
                g_tmp += bundle.input_grad.sum(axis=0)
            trig = update_learnable_trigger(trig, g_tmp)

        epoch_log.append({
            "epoch": epoch, "l_total": tally["ce"] / batches + tally["kld"] / batches,
            "ce": tally["ce"] / batches, "kld": tally["kld"] / batches,
            "clean_acc": tally["clean_correct"] / seen,
            "triggered_acc": tally["trig_correct"] / seen,
            "lr": float(lr), "seconds": time.perf_counter() - t0,
        })
        snapshot = _snapshot(model.params)
        log.debug("trigger epoch %d: L=%.4f clean=%.3f trig=%.3f", epoch,
                  epoch_log[-1]["l_total"], epoch_log[-1]["clean_acc"],
                  epoch_log[-1]["triggered_acc"])
    return trig, epoch_log


def train_fixed_trigger(model, trig, data, sched):
    """Alg.-style fixed-trigger training; the trigger itself is never touched."""
    if trig.mode != "fixed":
        raise ContractError("train_fixed_trigger requires a fixed-mode trigger")
    if data.class_count != model.class_count:
        raise ContractError("dataset class_count disagrees with model")
    before = trig.values.copy()
    _, epoch_log = _run_trigger_epochs(model, trig, data, sched, update_trigger=False)
    assert np.array_equal(before, trig.values), "fixed trigger mutated during training"
    model.meta.update(training="fixed_trigger", schedule=sched.as_dict(),
                      epoch_log=epoch_log, dataset=data.name,
                      trigger={"mode": "fixed", "eps_t": trig.eps_t, "seed": trig.seed})
    return TriggeredModel(model, trig)


def train_learnable_trigger(model, trig, data, sched):
    """Joint optimization: model every epoch, trigger during the first 60%."""
    if trig.mode != "learnable":
        raise ContractError("train_learnable_trigger requires a learnable-mode trigger")
    if data.class_count != model.class_count:
        raise ContractError("dataset class_count disagrees with model")
    trig, epoch_log = _run_trigger_epochs(model, trig, data, sched, update_trigger=True)
    model.meta.update(training="learnable_trigger", schedule=sched.as_dict(),
                      epoch_log=epoch_log, dataset=data.name,
                      trigger={"mode": "learnable", "step_alpha": trig.step_alpha,
                               "seed": trig.seed, "updates": trig.update_count})
    return TriggeredModel(model, trig)


def train_adversarial_pgd(model, data, sched, eps, attack_steps=7, attack_step=None):
    """Adversarial-training baseline: each batch is replaced by PGD examples
    crafted against the current model before the cross-entropy step."""
    from .attacks import AttackConfig, run_attack  # local import; attacks needs no training

    if eps < 0:
        raise ConfigurationError("eps must be >= 0")
    if data.class_count != model.class_count:
        raise ContractError("dataset class_count disagrees with model")
    if attack_step is None:
        attack_step = max(eps / 4.0, 1e-12)
    opt = _SGD(model.params, sched.momentum, sched.weight_decay)
    epoch_log = []
    snapshot = _snapshot(model.params)
    for epoch in range(sched.epochs):
        lr = sched.lr_at(epoch)
        t0 = time.perf_counter()
        losses, correct, seen = [], 0, 0
        for bi, batch in enumerate(batch_iterator(data, sched.batch_size,
                                                  _epoch_shuffle_seed(sched.seed, epoch))):
            if eps > 0:
                cfg = AttackConfig(method="pgd", eps=eps, attack_step=attack_step,
                                   iterations=attack_steps,
                                   seed=_epoch_shuffle_seed(sched.seed, epoch * 100003 + bi))
                pert = run_attack(model, batch, cfg)
                x = batch.images + pert.delta
            else:
                x = batch.images
            logits, caches = model._forward_cached(x, "train")
            loss = float(ce_per_sample(logits, batch.labels).mean())
            _finite_or_abort(model, loss, snapshot, f"epoch {epoch}")
            _, grads = model._backward(ce_grad(logits, batch.labels).astype(logits.dtype),
                                       caches, "params")
            opt.step(model.params, grads, lr)
            losses.append(loss)
            correct += int((logits.argmax(axis=1) == batch.labels).sum())
            seen += len(batch)
        epoch_log.append({"epoch": epoch, "loss": float(np.mean(losses)),
                          "adv_train_acc": correct / seen, "lr": float(lr),
                          "seconds": time.perf_counter() - t0})
        snapshot = _snapshot(model.params)
    model.meta.update(training="adversarial_pgd", schedule=sched.as_dict(),
                      epoch_log=epoch_log, dataset=data.name,
                      at_params={"eps": eps, "attack_steps": attack_steps,
                                 "attack_step": attack_step})
    return model
