"""Cheap preprocessing defenses used as comparators: bit-depth reduction,
Gaussian filtering, and random resize-and-pad."""

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from ._geom import resize_pad_restore
from .errors import ConfigurationError

KINDS = ("bdr", "gaussian", "rp")


@dataclass
class PreprocessorConfig:
    kind: str
    bit_depth: int = 2
    sigma: float = 0.6
    scale_max: float = 1.2
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown preprocessor kind {self.kind!r}; one of {KINDS}")
        if self.kind == "bdr" and self.bit_depth < 1:
            raise ConfigurationError("bit_depth must be >= 1")
        if self.kind == "gaussian" and self.sigma <= 0:
            raise ConfigurationError("sigma must be > 0")
        if self.kind == "rp" and self.scale_max < 1.0:
            raise ConfigurationError("scale_max must be >= 1")

    def as_dict(self):
        d = {"kind": self.kind}
        if self.kind == "bdr":
            d["bit_depth"] = self.bit_depth
        elif self.kind == "gaussian":
            d["sigma"] = self.sigma
        else:
            d.update(scale_max=self.scale_max, seed=self.seed)
        return d

    def label(self):
        params = ",".join(f"{k}={v}" for k, v in self.as_dict().items() if k != "kind")
        return f"{self.kind}({params})"


def bit_depth_reduce(images, d):
    """Quantize each pixel to the nearest of 2^d evenly spaced levels; idempotent."""
    if d < 1:
        raise ConfigurationError("bit depth must be >= 1")
    x = np.asarray(images)
    levels = x.dtype.type(2**d - 1)
    return np.round(x * levels) / levels


def gaussian_filter(images, sigma):
    """Separable per-channel Gaussian blur, kernel radius ceil(3*sigma),
    reflect padding. The normalized kernel leaves constant images untouched."""
    if sigma <= 0:
        raise ConfigurationError("sigma must be > 0")
    images = np.asarray(images)
    radius = int(np.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
    kernel = (kernel / kernel.sum()).astype(images.dtype)
    out = correlate1d(images, kernel, axis=2, mode="reflect")
    out = correlate1d(out, kernel, axis=3, mode="reflect")
    return np.clip(out, 0.0, 1.0)


def resize_and_pad(images, scale_max, seed):
    """Per-image random upscale into a zero-padded canvas, then resize back.

    Geometry is drawn per image, in order, from the seeded generator, so
    the result is independent of how callers batch the data.
    """
    if scale_max < 1.0:
        raise ConfigurationError("scale_max must be >= 1")
    images = np.asarray(images)
    n, c, h, w = images.shape
    canvas_h = int(np.ceil(scale_max * h))
    canvas_w = int(np.ceil(scale_max * w))
    rng = np.random.Generator(np.random.PCG64(seed))
    out = np.empty_like(images)
    for i in range(n):
        r_h = int(rng.integers(h, canvas_h + 1))
        r_w = max(1, int(round(r_h * w / h)))
        r_w = min(r_w, canvas_w)
        off_y = int(rng.integers(0, canvas_h - r_h + 1))
        off_x = int(rng.integers(0, canvas_w - r_w + 1))
        res, _ = resize_pad_restore(images[i:i + 1], r_h, r_w, off_y, off_x,
                                    canvas_h, canvas_w)
        out[i] = res[0]
    return np.clip(out, 0.0, 1.0)


def apply_preprocessor(images, cfg):
    if cfg.kind == "bdr":
        return bit_depth_reduce(images, cfg.bit_depth)
    if cfg.kind == "gaussian":
        return gaussian_filter(images, cfg.sigma)
    return resize_and_pad(images, cfg.scale_max, cfg.seed)


def defend_then_predict(model, preproc, images):
    """Preprocess, then predict; argmax ties break toward the lowest index."""
    return model.predict(apply_preprocessor(images, preproc))


@dataclass
class DefendedModel:
    """A classifier behind a preprocessing defense; prediction-only surface."""

    model: object
    preproc: PreprocessorConfig

    @property
    def class_count(self):
        return self.model.class_count

    def predict(self, images):
        return defend_then_predict(self.model, self.preproc, images)
