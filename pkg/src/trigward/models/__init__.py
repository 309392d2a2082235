"""Model zoo and the differentiation contract the rest of the package uses."""

import numpy as np

from .classifier import (Classifier, GradientBundle, ce_grad, ce_per_sample,
                         kld_to_uniform_grad, kld_to_uniform_per_sample,
                         log_softmax, softmax)
from .zoo import ZOO_ARCHS, build_model, list_architectures


def forward_logits(model, images):
    """Inference-mode logits; pure in (parameters, input)."""
    return model.forward_logits(images, mode="eval")


def grad(model, images, labels, loss_id, wrt="both", mode="eval", trigger=None):
    """Exact analytic gradients of the mean batch loss; see Classifier.grad."""
    return model.grad(images, labels, loss_id, wrt=wrt, mode=mode, trigger=trigger)
