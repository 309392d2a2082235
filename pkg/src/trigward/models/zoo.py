"""Architecture registry: five small nets of differing depth, width, and
kernel mix, plus a bare linear map used by closed-form tests.

Every architecture has a ``*_smooth`` twin (tanh activations, average
pooling) whose loss is differentiable everywhere; those twins back the
tight finite-difference gradient checks. The default nets use relu/max
pooling.
"""

import numpy as np

from ..errors import ConfigurationError
from . import layers as L
from .classifier import Classifier


def _act(name, smooth):
    return L.Tanh(name) if smooth else L.Relu(name)


def _pool(name, smooth, kind):
    return L.Pool2x2(name, "avg" if smooth else kind)


def _linear(c_out, in_shape, smooth):
    return [L.Flatten("flat"), L.Dense("fc", c_out, final=True)]


def _mlp(c_out, in_shape, smooth):
    return [
        L.Flatten("flat"),
        L.Dense("fc1", 256), L.BatchNorm1d("bn1"), _act("act1", smooth),
        L.Dense("fc2", 128), L.BatchNorm1d("bn2"), _act("act2", smooth),
        L.Dense("fc3", c_out, final=True),
    ]


def _tiny_cnn(c_out, in_shape, smooth):
    return [
        L.Conv2d("conv1", 16), L.BatchNorm2d("bn1"), _act("act1", smooth),
        _pool("pool1", smooth, "max"),
        L.Conv2d("conv2", 32), L.BatchNorm2d("bn2"), _act("act2", smooth),
        _pool("pool2", smooth, "max"),
        L.Flatten("flat"),
        L.Dense("fc", c_out, final=True),
    ]


def _mid_cnn(c_out, in_shape, smooth):
    return [
        L.Conv2d("conv1", 16), L.BatchNorm2d("bn1"), _act("act1", smooth),
        _pool("pool1", smooth, "avg"),
        L.Conv2d("conv2", 32), L.BatchNorm2d("bn2"), _act("act2", smooth),
        _pool("pool2", smooth, "avg"),
        L.Conv2d("conv3", 32), L.BatchNorm2d("bn3"), _act("act3", smooth),
        L.GlobalAvgPool("gap"),
        L.Dense("fc", c_out, final=True),
    ]


def _deep_cnn(c_out, in_shape, smooth):
    return [
        L.Conv2d("conv1", 12, kernel=5), L.BatchNorm2d("bn1"), _act("act1", smooth),
        _pool("pool1", smooth, "max"),
        L.Conv2d("conv2", 24), L.BatchNorm2d("bn2"), _act("act2", smooth),
        L.Conv2d("conv3", 24), L.BatchNorm2d("bn3"), _act("act3", smooth),
        _pool("pool2", smooth, "max"),
        L.Conv2d("conv4", 48), L.BatchNorm2d("bn4"), _act("act4", smooth),
        L.GlobalAvgPool("gap"),
        L.Dense("fc", c_out, final=True),
    ]


def _wide_cnn(c_out, in_shape, smooth):
    return [
        L.Conv2d("conv1", 32), L.BatchNorm2d("bn1"), _act("act1", smooth),
        _pool("pool1", smooth, "max"),
        L.Conv2d("conv2", 48), L.BatchNorm2d("bn2"), _act("act2", smooth),
        _pool("pool2", smooth, "max"),
        L.Flatten("flat"),
        L.Dense("fc1", 64), _act("act3", smooth),
        L.Dense("fc2", c_out, final=True),
    ]


_BUILDERS = {
    "linear": _linear,
    "mlp": _mlp,
    "tiny_cnn": _tiny_cnn,
    "mid_cnn": _mid_cnn,
    "deep_cnn": _deep_cnn,
    "wide_cnn": _wide_cnn,
}

# the experiment zoo: attacks transfer across genuinely different boundaries
ZOO_ARCHS = ("mlp", "tiny_cnn", "mid_cnn", "deep_cnn", "wide_cnn")


def list_architectures(include_smooth=False):
    base = sorted(_BUILDERS)
    if include_smooth:
        return base + [f"{a}_smooth" for a in base]
    return base


def build_model(arch_id, class_count, init_seed, input_shape=(3, 32, 32),
                dtype=np.float32):
    """Construct a deterministic, freshly initialized classifier.

    Same (arch_id, init_seed, input_shape, dtype) always yields bitwise
    identical parameters. Fresh models predict near-uniformly.
    """
    base_id, smooth = arch_id, False
    if arch_id.endswith("_smooth"):
        base_id, smooth = arch_id[: -len("_smooth")], True
    if base_id not in _BUILDERS:
        raise ConfigurationError(
            f"unknown arch_id {arch_id!r}; registered: {list_architectures(include_smooth=True)}")
    if class_count < 2:
        raise ConfigurationError("class_count must be >= 2")
    stack = _BUILDERS[base_id](class_count, tuple(input_shape), smooth)
    params, state, out_shape = L.init_params(stack, input_shape, init_seed, dtype)
    if out_shape != (class_count,):
        raise ConfigurationError(f"arch {arch_id} produced output shape {out_shape}")
    meta = {"init_seed": int(init_seed), "training": "none", "augmentation": "none"}
    return Classifier(arch_id, class_count, input_shape, stack, params, state, dtype, meta)
