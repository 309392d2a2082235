"""Construction, application, and sign-step updates of the constant trigger.

Triggered inputs are deliberately NOT clipped to [0,1]: clipping would
silently shrink the effective trigger magnitude near saturated pixels and
break the exact sign structure the first-order analysis relies on. A clip
flag exists for sensitivity studies only.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ContractError


@dataclass
class Trigger:
    """Constant input-shaped perturbation.

    fixed mode: every entry is exactly +/- eps_t.
    learnable mode: initialized U(-step_alpha, step_alpha), later moved by
    +/- step_alpha per accumulated-gradient sign; no hard bound is imposed.
    """

    values: np.ndarray
    mode: str
    eps_t: float = 0.0
    step_alpha: float = 0.0
    seed: int = 0
    update_count: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.mode not in ("fixed", "learnable"):
            raise ConfigurationError(f"trigger mode must be fixed|learnable, got {self.mode!r}")
        if not np.isfinite(self.values).all():
            raise ContractError("trigger values must be finite")

    @property
    def shape(self):
        return self.values.shape

    def linf(self):
        return float(np.abs(self.values).max())

    def mse(self):
        """Mean squared entry; the magnitude diagnostic (report scales by 1e2)."""
        return float((self.values**2).mean())


def init_fixed_trigger(shape, eps_t, seed):
    """Each entry independently +/- eps_t with probability 1/2."""
    if eps_t <= 0:
        raise ConfigurationError(
            "eps_t must be > 0: a zero-magnitude trigger makes the clean and "
            "triggered objectives contradictory")
    rng = np.random.Generator(np.random.PCG64(seed))
    bern = rng.integers(0, 2, size=shape).astype(np.float64)
    values = eps_t * (2.0 * bern - 1.0)
    return Trigger(values, "fixed", eps_t=float(eps_t), seed=int(seed))


def init_learnable_trigger(shape, step_alpha, seed):
    """Entries i.i.d. uniform on [-step_alpha, step_alpha]."""
    if step_alpha <= 0:
        raise ConfigurationError("step_alpha must be > 0")
    rng = np.random.Generator(np.random.PCG64(seed))
    values = rng.uniform(-step_alpha, step_alpha, size=shape)
    return Trigger(values, "learnable", step_alpha=float(step_alpha), seed=int(seed))


def apply_trigger(images, trig, clip=False):
    """x + tau broadcast over the batch; unclipped by default (see module docstring)."""
    images = np.asarray(images)
    tau = trig.values if isinstance(trig, Trigger) else np.asarray(trig)
    if images.shape[-tau.ndim:] != tau.shape:
        raise ContractError(f"trigger shape {tau.shape} incompatible with images {images.shape}")
    out = images + tau.astype(images.dtype)
    if clip:
        out = np.clip(out, 0.0, 1.0)
    return out


def update_learnable_trigger(trig, accumulated_grad):
    """tau <- tau - step_alpha * sign(accumulated gradient); sign(0) moves nothing."""
    if trig.mode != "learnable":
        raise ContractError("only learnable triggers can be updated")
    g = np.asarray(accumulated_grad, dtype=np.float64)
    if g.shape != trig.values.shape:
        raise ContractError(f"gradient shape {g.shape} != trigger shape {trig.values.shape}")
    new_values = trig.values - trig.step_alpha * np.sign(g)
    return Trigger(new_values, "learnable", step_alpha=trig.step_alpha, seed=trig.seed,
                   update_count=trig.update_count + 1)


def export_trigger(trig, path_prefix):
    """Persist raw values plus an amplified rendering for visual inspection."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    raw_path = f"{path_prefix}.npy"
    np.save(raw_path, trig.values)
    render = np.clip(0.5 + 10.0 * trig.values, 0.0, 1.0)
    if render.ndim == 3:
        render = render.transpose(1, 2, 0)
        if render.shape[-1] == 1:
            render = render[..., 0]
    fig, ax = plt.subplots(figsize=(3, 3))
    ax.imshow(render, interpolation="nearest",
              cmap=None if render.ndim == 3 else "gray", vmin=0, vmax=1)
    ax.set_title(f"trigger x10 ({trig.mode})")
    ax.axis("off")
    png_path = f"{path_prefix}.png"
    fig.savefig(png_path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return raw_path, png_path
