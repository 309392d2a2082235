"""Robustness metrics: per-pair robust accuracy, per-victim means over the
surrogate set, and the defense-level grand mean, plus clean accuracy.

Adversarial examples are generated once per (surrogate, attack) and replayed
against every victim, so columns of a matrix compare on identical inputs.
"""

from dataclasses import dataclass, field

import numpy as np

from .attacks import AdversarialSet, run_attack
from .data import Batch, batch_iterator
from .errors import ContractError, FingerprintConflictError
from .fingerprint import fingerprint


@dataclass
class RobustnessMatrix:
    """Robust-accuracy values indexed (victim, surrogate) for one attack."""

    surrogate_ids: list
    victim_ids: list
    attack_id: str
    values: np.ndarray
    fingerprints: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (len(self.victim_ids), len(self.surrogate_ids))
        if self.values.shape != expected:
            raise ContractError(f"matrix shape {self.values.shape} != {expected}")

    def is_complete(self):
        return bool(np.isfinite(self.values).all())

    def per_victim_mean(self):
        """Mean over the surrogate set, one value per victim."""
        return {v: mean_over_surrogates(self.values[i])
                for i, v in enumerate(self.victim_ids)}

    def grand_mean(self):
        return mean_over_victims(self.values)

    def to_dict(self):
        return {"surrogate_ids": list(self.surrogate_ids),
                "victim_ids": list(self.victim_ids), "attack_id": self.attack_id,
                "values": self.values.tolist(), "fingerprints": dict(self.fingerprints),
                "flags": list(self.flags)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["surrogate_ids"], d["victim_ids"], d["attack_id"],
                   np.asarray(d["values"]), d.get("fingerprints", {}), d.get("flags", []))


def mean_over_surrogates(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ContractError("surrogate set must be nonempty")
    return float(values.mean())


def mean_over_victims(matrix):
    """Grand mean over (victim, surrogate); equals the mean of per-victim means."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.size == 0:
        raise ContractError("matrix must be nonempty")
    if not np.isfinite(matrix).all():
        raise ContractError("matrix has missing cells")
    return float(matrix.mean())


def clean_accuracy(victim, testset, batch_size=512):
    """Fraction correct on unperturbed inputs (triggered victims add their
    trigger internally; that IS their clean input path)."""
    correct = 0
    for batch in batch_iterator(testset, min(batch_size, testset.n), None):
        correct += int((victim.predict(batch.images) == batch.labels).sum())
    return correct / testset.n


def generate_adversarial_set(surrogate, testset, attack_cfg, surrogate_id,
                             batch_size=256):
    """Craft perturbations for the whole test set on one surrogate.

    Per-batch attack seeds are derived deterministically from the config
    seed, so archives are bitwise reproducible.
    """
    deltas = []
    for bi, batch in enumerate(batch_iterator(testset, batch_size, None)):
        cfg = type(attack_cfg)(**{**attack_cfg.as_dict(),
                                  "seed": int(np.random.SeedSequence(
                                      [attack_cfg.seed, bi]).generate_state(1)[0])})
        deltas.append(run_attack(surrogate, batch, cfg).delta)
    return AdversarialSet(indices=np.arange(testset.n), delta=np.concatenate(deltas),
                          attack_fingerprint=attack_cfg.fingerprint(),
                          surrogate_id=surrogate_id, dataset_name=testset.name,
                          eps=attack_cfg.eps)


def robust_accuracy(victim, surrogate, attack_cfg, testset, delta_set=None,
                    surrogate_id="surrogate", batch_size=256):
    """Fraction of adversarial test inputs the victim still classifies correctly.

    If ``delta_set`` is given it must have been generated with the same
    attack config and surrogate; a mismatch is rejected rather than silently
    reevaluated.
    """
    if delta_set is None:
        delta_set = generate_adversarial_set(surrogate, testset, attack_cfg,
                                             surrogate_id, batch_size)
    else:
        if delta_set.attack_fingerprint != attack_cfg.fingerprint():
            raise FingerprintConflictError(
                "perturbation archive was generated under a different attack config")
        if surrogate is not None and delta_set.surrogate_id != surrogate_id:
            raise FingerprintConflictError(
                f"perturbation archive belongs to surrogate {delta_set.surrogate_id!r}, "
                f"not {surrogate_id!r}")
    idx = np.asarray(delta_set.indices)
    images = testset.images[idx]
    labels = testset.labels[idx]
    correct = 0
    for start in range(0, len(idx), batch_size):
        sl = slice(start, start + batch_size)
        adv = np.clip(images[sl] + delta_set.delta[sl].astype(images.dtype), 0.0, 1.0)
        correct += int((victim.predict(adv) == labels[sl]).sum())
    return correct / len(idx)


def fill_robustness_matrix(victims, surrogates, attack_cfg, testset, batch_size=256):
    """Evaluate every (victim, surrogate) cell with shared perturbation sets.

    ``victims`` and ``surrogates`` are {id: model-like} mappings; returns
    (matrix, {surrogate_id: AdversarialSet}).
    """
    delta_sets = {sid: generate_adversarial_set(s, testset, attack_cfg, sid, batch_size)
                  for sid, s in surrogates.items()}
    values = np.full((len(victims), len(surrogates)), np.nan)
    for vi, (vid, victim) in enumerate(victims.items()):
        for si, sid in enumerate(surrogates):
            values[vi, si] = robust_accuracy(victim, surrogates[sid], attack_cfg,
                                             testset, delta_set=delta_sets[sid],
                                             surrogate_id=sid, batch_size=batch_size)
    matrix = RobustnessMatrix(list(surrogates), list(victims), attack_cfg.method, values,
                              fingerprints={"attack": attack_cfg.fingerprint(),
                                            "dataset": testset.name})
    return matrix, delta_sets
