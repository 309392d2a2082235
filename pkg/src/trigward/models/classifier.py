"""Classifier core: forward, losses, and exact analytic gradients.

Gradients are always of the mean batch loss. ``input_grad`` rows therefore
carry the per-sample gradient divided by the batch size; multiply by B to
recover per-sample gradients.
"""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, ContractError, NumericError
from . import layers as L

LOSS_IDS = ("cross_entropy", "kld_to_uniform", "total_trigger_loss")


@dataclass
class GradientBundle:
    loss_value: float
    param_grads: dict | None = None
    input_grad: np.ndarray | None = None


def log_softmax(z):
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(z):
    return np.exp(log_softmax(z))


def ce_per_sample(z, y):
    logp = log_softmax(z)
    return -logp[np.arange(z.shape[0]), y]


def ce_grad(z, y):
    """d(mean CE)/dz."""
    p = softmax(z)
    p[np.arange(z.shape[0]), y] -= 1.0
    return p / z.shape[0]


def kld_to_uniform_per_sample(z):
    """KL(softmax(z) || uniform) = log C - H(softmax(z)); zero exactly at uniform."""
    logp = log_softmax(z)
    p = np.exp(logp)
    return np.log(z.shape[1]) + (p * logp).sum(axis=1)


def kld_to_uniform_grad(z):
    """d(mean KL(p||u))/dz = p * (log p + H(p)) / B."""
    logp = log_softmax(z)
    p = np.exp(logp)
    ent = -(p * logp).sum(axis=1, keepdims=True)
    return p * (logp + ent) / z.shape[0]


class Classifier:
    """A stack of layers with named parameters and a fixed input shape."""

    def __init__(self, arch_id, class_count, input_shape, layer_stack, params, state,
                 dtype, meta=None):
        self.arch_id = arch_id
        self.class_count = class_count
        self.input_shape = tuple(input_shape)
        self.layers = layer_stack
        self.params = params
        self.state = state
        self.dtype = np.dtype(dtype)
        self.meta = dict(meta or {})

    # -- forward ----------------------------------------------------------

    def _check_batch(self, images):
        images = np.asarray(images)
        if images.ndim != 4 or images.shape[1:] != self.input_shape:
            raise ContractError(
                f"batch shape {images.shape} incompatible with input_shape {self.input_shape}")
        if images.shape[0] == 0:
            raise ContractError("empty batch")
        return images.astype(self.dtype, copy=False)

    def forward_logits(self, images, mode="eval"):
        x = self._check_batch(images)
        for layer in self.layers:
            x, _ = layer.forward(x, self.params, self.state, mode)
        return x

    def _forward_cached(self, images, mode):
        x = self._check_batch(images)
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x, self.params, self.state, mode)
            caches.append(cache)
        return x, caches

    def _backward(self, dlogits, caches, wrt):
        grads = {}
        dy = dlogits
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dy, layer_grads = layer.backward(dy, cache, self.params)
            if wrt in ("params", "both"):
                grads.update(layer_grads)
        input_grad = dy if wrt in ("input", "both") else None
        return input_grad, (grads if wrt in ("params", "both") else None)

    # -- losses and gradients ----------------------------------------------

    def grad(self, images, labels, loss_id, wrt="both", mode="eval", trigger=None):
        """Exact gradients of the mean batch loss.

        ``total_trigger_loss`` runs the concatenated (clean, triggered)
        forward: the clean half feeds the uniformity term, the triggered
        half the cross-entropy term, sharing one pass through any
        batch-statistics layers.
        """
        if loss_id not in LOSS_IDS:
            raise ConfigurationError(f"unknown loss_id {loss_id!r}; expected one of {LOSS_IDS}")
        if wrt not in ("params", "input", "both"):
            raise ConfigurationError(f"wrt must be params|input|both, got {wrt!r}")
        images = np.asarray(images)
        b = images.shape[0]

        if loss_id == "total_trigger_loss":
            if trigger is None:
                raise ContractError("total_trigger_loss requires a trigger")
            tau = np.asarray(getattr(trigger, "values", trigger), dtype=images.dtype)
            labels = np.asarray(labels)
            x_in = np.concatenate([images, images + tau[None]], axis=0)
            logits, caches = self._forward_cached(x_in, mode)
            z_neg, z_pos = logits[:b], logits[b:]
            ce = float(ce_per_sample(z_pos, labels).mean())
            kld = float(kld_to_uniform_per_sample(z_neg).mean())
            loss = ce + kld
            dlogits = np.concatenate([kld_to_uniform_grad(z_neg), ce_grad(z_pos, labels)], axis=0)
        else:
            logits, caches = self._forward_cached(images, mode)
            if loss_id == "cross_entropy":
                labels = np.asarray(labels)
                loss = float(ce_per_sample(logits, labels).mean())
                dlogits = ce_grad(logits, labels)
            else:
                loss = float(kld_to_uniform_per_sample(logits).mean())
                dlogits = kld_to_uniform_grad(logits)

        if not np.isfinite(loss):
            raise NumericError(f"non-finite {loss_id}", {"loss": loss, "arch": self.arch_id})

        input_grad, param_grads = self._backward(dlogits.astype(logits.dtype), caches, wrt)
        if loss_id == "total_trigger_loss" and input_grad is not None:
            input_grad = input_grad[:b] + input_grad[b:]
        return GradientBundle(loss, param_grads, input_grad)

    def loss_and_input_grad(self, images, labels, mode="eval"):
        """Mean cross-entropy and its input gradient; the attack-facing surface."""
        g = self.grad(images, labels, "cross_entropy", wrt="input", mode=mode)
        return g.loss_value, g.input_grad

    def per_sample_ce(self, images, labels):
        logits = self.forward_logits(images)
        return ce_per_sample(logits, np.asarray(labels))

    def predict(self, images):
        """Argmax class; ties break toward the lowest class index."""
        return self.forward_logits(images).argmax(axis=1)

    # -- bookkeeping --------------------------------------------------------

    def param_count(self):
        return int(sum(p.size for p in self.params.values()))

    def clone(self):
        c = Classifier(self.arch_id, self.class_count, self.input_shape, self.layers,
                       {k: v.copy() for k, v in self.params.items()},
                       {k: v.copy() for k, v in self.state.items()},
                       self.dtype, dict(self.meta))
        return c

    def __repr__(self):
        return (f"Classifier({self.arch_id}, C={self.class_count}, "
                f"input={self.input_shape}, params={self.param_count()})")
